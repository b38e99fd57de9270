#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "storyanchor/tensor.hpp"

namespace storyanchor::numerics {

struct Parameter {
  Tensor value;
  bool trainable = true;
};

/// Named trainable state. Iteration order is lexicographic by name, which is
/// what makes checkpoints byte-deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const noexcept { return params_.size(); }

  /// Sets the trainable flag on every parameter whose name satisfies `match`.
  void set_trainable(const std::function<bool(const std::string&)>& match, bool trainable);
  void set_all_trainable(bool trainable);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

using GradMap = std::map<std::string, Tensor>;

/// Handle to a node on a Tape.
struct Var {
  size_t id = 0;
};

/// Reverse-mode tape. Built fresh for every training step and discarded after
/// backward(); parameters are referenced, not copied, so the ParamStore must
/// outlive the tape and must not be modified while the tape is alive.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double>)>;

  Var constant(Tensor value);
  Var parameter(const std::string& name, const Parameter& param);
  Var parameter(const ParamStore& store, const std::string& name) {
    return parameter(name, store.get(name));
  }

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Linear algebra. matmul accepts [m x k]·[k] and [m x k]·[k x n].
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice(Var a, size_t offset, size_t length);
  Var sum(Var a);

  Var relu(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);

  /// Row `row` of a [V x E] table.
  Var embedding(Var table, size_t row);

  /// -log softmax(logits)[target], max-subtracted.
  Var softmax_cross_entropy(Var logits, size_t target);
  /// Mean of squared differences over all entries.
  Var mse(Var prediction, Var target);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(Var loss);

  /// Gradient accumulated on a node; empty when the node needs no gradient.
  std::span<const double> grad(Var v) const;

  /// Gradients for every trainable parameter that appears on the tape.
  GradMap parameter_grads() const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
    std::string param_name;
    bool is_parameter = false;

    const Tensor& value() const { return external != nullptr ? *external : owned; }
  };

  Var push(const char* op, Tensor value, bool requires_grad, Backward backward);
  std::span<double> grad_buffer(size_t id);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, size_t> param_nodes_;
};

/// Stateless helpers for inference paths that do not need a tape.
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);
/// Index of the maximum value; ties go to the lowest index.
size_t argmax(std::span<const double> values);

}  // namespace storyanchor::numerics
