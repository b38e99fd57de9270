#include "storyanchor/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "storyanchor/error.hpp"

namespace storyanchor::numerics {

Parameter& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  auto [it, inserted] = params_.try_emplace(name, Parameter{std::move(value), trainable});
  if (!inserted) {
    fail(ErrorCategory::kConsistency, "duplicate parameter name '" + name + "'");
  }
  return it->second;
}

Parameter& ParamStore::get(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorCategory::kConsistency, "unknown parameter '" + name + "'");
  }
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorCategory::kConsistency, "unknown parameter '" + name + "'");
  }
  return it->second;
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& match, bool trainable) {
  for (auto& [name, param] : params_) {
    if (match(name)) {
      param.trainable = trainable;
    }
  }
}

void ParamStore::set_all_trainable(bool trainable) {
  for (auto& entry : params_) {
    entry.second.trainable = trainable;
  }
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCategory::kShape, std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                                    shape_string(b.shape()) + " differ");
  }
}

void require_vector(const char* op, const Tensor& a) {
  if (a.rank() != 1) {
    fail(ErrorCategory::kShape, std::string(op) + ": expected a vector, got " + shape_string(a.shape()));
  }
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    fail(ErrorCategory::kIndex, "variable " + std::to_string(v.id) + " is not on this tape");
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) {
    fail(ErrorCategory::kInvalidArgument, "expected a scalar, got shape " + shape_string(t.shape()));
  }
  return t[0];
}

Var Tape::push(const char* op, Tensor value, bool requires_grad, Backward backward) {
  if (!value.all_finite()) {
    fail(ErrorCategory::kNumeric, std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) {
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) {
    return {};
  }
  if (n.grad.empty()) {
    n.grad.assign(n.value().size(), 0.0);
  }
  return n.grad;
}

std::span<const double> Tape::grad(Var v) const { return node(v).grad; }

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::parameter(const std::string& name, const Parameter& param) {
  if (const auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Var{it->second};
  }
  if (!param.value.all_finite()) {
    fail(ErrorCategory::kNumeric, "parameter '" + name + "' holds a non-finite value");
  }
  Node n;
  n.external = &param.value;
  n.requires_grad = param.trainable;
  n.param_name = name;
  n.is_parameter = true;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  const bool ok = x.rank() == 2 && (y.rank() == 1 || y.rank() == 2) && x.dim(1) == y.dim(0);
  if (!ok) {
    fail(ErrorCategory::kShape,
         "matmul: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) + " are incompatible");
  }
  const size_t m = x.dim(0);
  const size_t k = x.dim(1);
  const size_t n = y.rank() == 1 ? 1 : y.dim(1);
  Tensor out(y.rank() == 1 ? Shape{m} : Shape{m, n});
  const double* xd = x.data();
  const double* yd = y.data();
  double* od = out.data();
  if (n == 1) {
    for (size_t i = 0; i < m; ++i) {
      const double* row = xd + i * k;
      double acc = 0.0;
      for (size_t j = 0; j < k; ++j) {
        acc += row[j] * yd[j];
      }
      od[i] = acc;
    }
  }
  for (size_t i = 0; i < m && n > 1; ++i) {
    const double* row = xd + i * k;
    for (size_t j = 0; j < k; ++j) {
      const double xv = row[j];
      const double* yrow = yd + j * n;
      double* orow = od + i * n;
      for (size_t c = 0; c < n; ++c) {
        orow[c] += xv * yrow[c];
      }
    }
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push("matmul", std::move(out), rg, [a, b, m, k, n](Tape& t, std::span<const double> g) {
    const double* xd = t.value(a).data();
    const double* yd = t.value(b).data();
    if (n == 1) {
      if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
        for (size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          double* garow = ga.data() + i * k;
          for (size_t j = 0; j < k; ++j) {
            garow[j] += gi * yd[j];
          }
        }
      }
      if (auto gb = t.grad_buffer(b.id); !gb.empty()) {
        for (size_t i = 0; i < m; ++i) {
          const double gi = g[i];
          const double* row = xd + i * k;
          for (size_t j = 0; j < k; ++j) {
            gb[j] += row[j] * gi;
          }
        }
      }
      return;
    }
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (size_t c = 0; c < n; ++c) {
            acc += g[i * n + c] * yd[j * n + c];
          }
          ga[i * k + j] += acc;
        }
      }
    }
    if (auto gb = t.grad_buffer(b.id); !gb.empty()) {
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < k; ++j) {
          const double xv = xd[i * k + j];
          for (size_t c = 0; c < n; ++c) {
            gb[j * n + c] += xv * g[i * n + c];
          }
        }
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_same_shape("add", x, y);
  Tensor out = x;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] += y[i];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push("add", std::move(out), rg, [a, b](Tape& t, std::span<const double> g) {
    for (const Var v : {a, b}) {
      if (auto gv = t.grad_buffer(v.id); !gv.empty()) {
        for (size_t i = 0; i < g.size(); ++i) {
          gv[i] += g[i];
        }
      }
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_same_shape("sub", x, y);
  Tensor out = x;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] -= y[i];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push("sub", std::move(out), rg, [a, b](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
      }
    }
    if (auto gb = t.grad_buffer(b.id); !gb.empty()) {
      for (size_t i = 0; i < g.size(); ++i) {
        gb[i] -= g[i];
      }
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_same_shape("mul", x, y);
  Tensor out = x;
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] *= y[i];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push("mul", std::move(out), rg, [a, b](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      const Tensor& y = t.value(b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * y[i];
      }
    }
    if (auto gb = t.grad_buffer(b.id); !gb.empty()) {
      const Tensor& x = t.value(a);
      for (size_t i = 0; i < g.size(); ++i) {
        gb[i] += g[i] * x[i];
      }
    }
  });
}

Var Tape::scale(Var a, double factor) {
  Tensor out = value(a);
  for (double& v : out.values()) {
    v *= factor;
  }
  return push("scale", std::move(out), requires_grad(a), [a, factor](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += factor * g[i];
      }
    }
  });
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) {
    fail(ErrorCategory::kInvalidArgument, "concat: no inputs");
  }
  size_t total = 0;
  bool rg = false;
  for (const Var p : parts) {
    require_vector("concat", value(p));
    total += value(p).size();
    rg = rg || requires_grad(p);
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Var p : parts) {
    const auto v = value(p).values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push("concat", Tensor::vector(std::move(out)), rg, [inputs](Tape& t, std::span<const double> g) {
    size_t offset = 0;
    for (const Var p : inputs) {
      const size_t n = t.value(p).size();
      if (auto gp = t.grad_buffer(p.id); !gp.empty()) {
        for (size_t i = 0; i < n; ++i) {
          gp[i] += g[offset + i];
        }
      }
      offset += n;
    }
  });
}

Var Tape::slice(Var a, size_t offset, size_t length) {
  const Tensor& x = value(a);
  require_vector("slice", x);
  if (offset + length > x.size()) {
    fail(ErrorCategory::kShape, "slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                                    ") exceeds shape " + shape_string(x.shape()));
  }
  const auto v = x.values();
  Tensor out = Tensor::vector(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(offset),
                                                  v.begin() + static_cast<std::ptrdiff_t>(offset + length)));
  return push("slice", std::move(out), requires_grad(a), [a, offset](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      for (size_t i = 0; i < g.size(); ++i) {
        ga[offset + i] += g[i];
      }
    }
  });
}

Var Tape::sum(Var a) {
  double total = 0.0;
  for (const double v : value(a).values()) {
    total += v;
  }
  return push("sum", Tensor::vector({total}), requires_grad(a), [a](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      for (double& v : ga) {
        v += g[0];
      }
    }
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) {
    v = v > 0.0 ? v : 0.0;
  }
  return push("relu", std::move(out), requires_grad(a), [a](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
      const Tensor& x = t.value(a);
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) {
          ga[i] += g[i];
        }
      }
    }
  });
}

Var Tape::tanh(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) {
    v = std::tanh(v);
  }
  const Var result = push("tanh", std::move(out), requires_grad(a), nullptr);
  if (requires_grad(a)) {
    nodes_[result.id].backward = [a, result](Tape& t, std::span<const double> g) {
      if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
        const Tensor& y = t.value(result);
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * (1.0 - y[i] * y[i]);
        }
      }
    };
  }
  return result;
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& v : out.values()) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  const Var result = push("sigmoid", std::move(out), requires_grad(a), nullptr);
  if (requires_grad(a)) {
    nodes_[result.id].backward = [a, result](Tape& t, std::span<const double> g) {
      if (auto ga = t.grad_buffer(a.id); !ga.empty()) {
        const Tensor& y = t.value(result);
        for (size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * y[i] * (1.0 - y[i]);
        }
      }
    };
  }
  return result;
}

Var Tape::embedding(Var table, size_t row) {
  const Tensor& w = value(table);
  if (w.rank() != 2) {
    fail(ErrorCategory::kShape, "embedding: table must be a matrix, got " + shape_string(w.shape()));
  }
  if (row >= w.dim(0)) {
    fail(ErrorCategory::kIndex,
         "embedding: row " + std::to_string(row) + " out of range for table " + shape_string(w.shape()));
  }
  const size_t width = w.dim(1);
  const auto v = w.values().subspan(row * width, width);
  Tensor out = Tensor::vector(std::vector<double>(v.begin(), v.end()));
  return push("embedding", std::move(out), requires_grad(table), [table, row, width](Tape& t, std::span<const double> g) {
    if (auto gw = t.grad_buffer(table.id); !gw.empty()) {
      for (size_t i = 0; i < width; ++i) {
        gw[row * width + i] += g[i];
      }
    }
  });
}

Var Tape::softmax_cross_entropy(Var logits, size_t target) {
  const Tensor& z = value(logits);
  require_vector("softmax_cross_entropy", z);
  if (z.size() < 2) {
    fail(ErrorCategory::kShape, "softmax_cross_entropy: need at least 2 classes, got " + shape_string(z.shape()));
  }
  if (target >= z.size()) {
    fail(ErrorCategory::kIndex, "softmax_cross_entropy: target " + std::to_string(target) + " out of range for " +
                                    std::to_string(z.size()) + " classes");
  }
  std::vector<double> log_probs = log_softmax(z.values());
  const double loss = -log_probs[target];
  return push("softmax_cross_entropy", Tensor::vector({loss}), requires_grad(logits),
              [logits, target, log_probs = std::move(log_probs)](Tape& t, std::span<const double> g) {
                if (auto gz = t.grad_buffer(logits.id); !gz.empty()) {
                  for (size_t i = 0; i < log_probs.size(); ++i) {
                    const double p = std::exp(log_probs[i]);
                    gz[i] += g[0] * (p - (i == target ? 1.0 : 0.0));
                  }
                }
              });
}

Var Tape::mse(Var prediction, Var target) {
  const Tensor& p = value(prediction);
  const Tensor& y = value(target);
  require_same_shape("mse", p, y);
  if (p.empty()) {
    fail(ErrorCategory::kShape, "mse: empty operands");
  }
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    total += d * d;
  }
  const double n = static_cast<double>(p.size());
  const bool rg = requires_grad(prediction) || requires_grad(target);
  return push("mse", Tensor::vector({total / n}), rg, [prediction, target, n](Tape& t, std::span<const double> g) {
    const Tensor& p = t.value(prediction);
    const Tensor& y = t.value(target);
    auto gp = t.grad_buffer(prediction.id);
    auto gy = t.grad_buffer(target.id);
    for (size_t i = 0; i < p.size(); ++i) {
      const double d = 2.0 * (p[i] - y[i]) / n * g[0];
      if (!gp.empty()) gp[i] += d;
      if (!gy.empty()) gy[i] -= d;
    }
  });
}

void Tape::backward(Var loss) {
  const Tensor& l = value(loss);
  if (l.size() != 1) {
    fail(ErrorCategory::kInvalidArgument, "backward: loss must be a scalar, got " + shape_string(l.shape()));
  }
  if (!requires_grad(loss)) {
    return;
  }
  grad_buffer(loss.id)[0] += 1.0;
  for (size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) {
      continue;
    }
    // The closure may grow other nodes' grad buffers but never this node's,
    // so passing a span over our own buffer is safe.
    n.backward(*this, std::span<const double>(n.grad));
  }
}

GradMap Tape::parameter_grads() const {
  GradMap grads;
  for (const Node& n : nodes_) {
    if (!n.is_parameter || !n.requires_grad) {
      continue;
    }
    Tensor g(n.value().shape());
    if (!n.grad.empty()) {
      std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    }
    grads.emplace(n.param_name, std::move(g));
  }
  return grads;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (const double z : logits) {
    total += std::exp(z - top);
  }
  const double log_norm = top + std::log(total);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - log_norm;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& v : out) {
    v = std::exp(v);
  }
  return out;
}

size_t argmax(std::span<const double> values) {
  size_t best = 0;
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return best;
}

}  // namespace storyanchor::numerics
