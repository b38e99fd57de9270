#include <cmath>
#include <functional>

#include "doctest.h"
#include "storyanchor/adam.hpp"
#include "storyanchor/autograd.hpp"
#include "storyanchor/binary_io.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/gradcheck.hpp"
#include "storyanchor/rng.hpp"

using namespace storyanchor;
using namespace storyanchor::numerics;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    v = rng.uniform(-scale, scale);
  }
  return t;
}

// Independent central-difference oracle over a plain function of the values.
double fd_rel_error(const std::function<double(const Tensor&)>& f, Tensor x, std::span<const double> analytic,
                    double eps) {
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double plus = f(x);
    x[i] = saved - eps;
    const double minus = f(x);
    x[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-12});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an Error");
  return ErrorCategory::kUsage;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("elementwise activations") {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({-1.0, 2.0}));
  CHECK(tape.value(tape.relu(x)) == Tensor::vector({0.0, 2.0}));
  const Var zero = tape.constant(Tensor::vector({0.0}));
  CHECK(tape.value(tape.sigmoid(zero))[0] == 0.5);
  CHECK(tape.value(tape.tanh(zero))[0] == 0.0);
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(7);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {4, 2});
  const Tensor weights = random_tensor(rng, {3, 2});

  auto loss_of = [&](const Tensor& lhs, const Tensor& rhs) {
    double total = 0.0;
    for (size_t i = 0; i < 3; ++i) {
      for (size_t j = 0; j < 2; ++j) {
        double dot = 0.0;
        for (size_t k = 0; k < 4; ++k) {
          dot += lhs.at(i, k) * rhs.at(k, j);
        }
        total += weights.at(i, j) * dot;
      }
    }
    return total;
  };

  ParamStore params;
  params.add("a", a);
  params.add("b", b);
  Tape tape;
  const Var prod = tape.matmul(tape.parameter(params, "a"), tape.parameter(params, "b"));
  const Var loss = tape.sum(tape.mul(prod, tape.constant(weights)));
  CHECK(tape.scalar(loss) == doctest::Approx(loss_of(a, b)).epsilon(1e-14));
  tape.backward(loss);
  const GradMap grads = tape.parameter_grads();

  const double err_a = fd_rel_error([&](const Tensor& x) { return loss_of(x, b); }, a, grads.at("a").values(), 1e-6);
  const double err_b = fd_rel_error([&](const Tensor& x) { return loss_of(a, x); }, b, grads.at("b").values(), 1e-6);
  CHECK(err_a <= 1e-6);
  CHECK(err_b <= 1e-6);
}

TEST_CASE("matrix-vector product and shape errors") {
  Tape tape;
  const Var w = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const Var x = tape.constant(Tensor::vector({1.0, 0.0, -1.0}));
  CHECK(tape.value(tape.matmul(w, x)) == Tensor::vector({-2.0, -2.0}));

  const Var bad = tape.constant(Tensor::vector({1.0, 2.0}));
  try {
    tape.matmul(w, bad);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kShape);
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
  CHECK(category_of([&] { tape.add(x, bad); }) == ErrorCategory::kShape);
  CHECK(category_of([&] { tape.slice(x, 2, 2); }) == ErrorCategory::kShape);
  CHECK(category_of([&] { tape.embedding(w, 2); }) == ErrorCategory::kIndex);
}

TEST_CASE("softmax cross-entropy values") {
  Tape tape;
  const Var uniform = tape.constant(Tensor::vector({0.3, 0.3, 0.3, 0.3}));
  CHECK(tape.scalar(tape.softmax_cross_entropy(uniform, 2)) == doctest::Approx(1.3862943611198906).epsilon(1e-14));

  const Var peaked = tape.constant(Tensor::vector({10.0, 0.0}));
  // -log(1 / (1 + e^-10)) evaluated as log1p(exp(-10)).
  CHECK(tape.scalar(tape.softmax_cross_entropy(peaked, 0)) == doctest::Approx(4.539889921686465e-05).epsilon(1e-12));

  CHECK(category_of([&] { tape.softmax_cross_entropy(peaked, 2); }) == ErrorCategory::kIndex);
  const Var single = tape.constant(Tensor::vector({1.0}));
  CHECK(category_of([&] { tape.softmax_cross_entropy(single, 0); }) == ErrorCategory::kShape);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng(11);
  const Tensor logits = random_tensor(rng, {6}, 3.0);
  const size_t target = 4;
  auto loss_of = [&](const Tensor& z) {
    double top = z[0];
    for (double v : z.values()) top = std::max(top, v);
    double total = 0.0;
    for (double v : z.values()) total += std::exp(v - top);
    return -(z[target] - top - std::log(total));
  };
  ParamStore params;
  params.add("z", logits);
  Tape tape;
  const Var loss = tape.softmax_cross_entropy(tape.parameter(params, "z"), target);
  tape.backward(loss);
  CHECK(fd_rel_error(loss_of, logits, tape.parameter_grads().at("z").values(), 1e-6) <= 1e-6);
}

TEST_CASE("mean squared error") {
  Tape tape;
  const Var p = tape.constant(Tensor::vector({1.0, 2.0}));
  const Var y = tape.constant(Tensor::vector({0.0, 0.0}));
  CHECK(tape.scalar(tape.mse(p, y)) == 2.5);
  CHECK(tape.scalar(tape.mse(p, p)) == 0.0);
  const Var short_target = tape.constant(Tensor::vector({0.0}));
  CHECK(category_of([&] { tape.mse(p, short_target); }) == ErrorCategory::kShape);

  Rng rng(3);
  const Tensor pred = random_tensor(rng, {5});
  const Tensor target = random_tensor(rng, {5});
  ParamStore params;
  params.add("p", pred);
  Tape t2;
  const Var loss = t2.mse(t2.parameter(params, "p"), t2.constant(target));
  t2.backward(loss);
  auto loss_of = [&](const Tensor& x) {
    double total = 0.0;
    for (size_t i = 0; i < 5; ++i) total += (x[i] - target[i]) * (x[i] - target[i]);
    return total / 5.0;
  };
  CHECK(fd_rel_error(loss_of, pred, t2.parameter_grads().at("p").values(), 1e-6) <= 1e-8);
}

TEST_CASE("every primitive passes grad_check") {
  Rng rng(5);
  ParamStore params;
  params.add("w", random_tensor(rng, {4, 6}, 0.5));
  params.add("x", random_tensor(rng, {6}));
  params.add("table", random_tensor(rng, {5, 3}));
  params.add("y", random_tensor(rng, {4}));

  const LossBuilder loss = [](Tape& t, const ParamStore& p) {
    const Var w = t.parameter(p, "w");
    const Var x = t.parameter(p, "x");
    const Var h = t.matmul(w, x);
    const Var gate = t.sigmoid(h);
    const Var cand = t.tanh(t.add(h, t.parameter(p, "y")));
    const Var mixed = t.mul(gate, t.sub(cand, t.relu(h)));
    const Var emb = t.embedding(t.parameter(p, "table"), 2);
    const Var joined = t.concat({t.slice(mixed, 1, 3), t.scale(emb, 0.7)});
    const Var ce = t.softmax_cross_entropy(joined, 4);
    return t.add(ce, t.mse(t.slice(joined, 0, 3), emb));
  };
  const GradCheckReport report = grad_check(loss, params, 1e-6);
  CHECK(report.entries_checked == 24 + 6 + 15 + 4);
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("grad_check rejects non-scalar computations and bad eps") {
  ParamStore params;
  params.add("x", Tensor::vector({1.0, 2.0}));
  const LossBuilder vector_out = [](Tape& t, const ParamStore& p) { return t.parameter(p, "x"); };
  CHECK(category_of([&] { grad_check(vector_out, params, 1e-6); }) == ErrorCategory::kInvalidArgument);
  const LossBuilder scalar_out = [](Tape& t, const ParamStore& p) { return t.sum(t.parameter(p, "x")); };
  CHECK(category_of([&] { grad_check(scalar_out, params, 0.0); }) == ErrorCategory::kInvalidArgument);
  CHECK(category_of([&] { grad_check(scalar_out, params, 1e-6, -1.0); }) == ErrorCategory::kInvalidArgument);
}

TEST_CASE("grad_check floor scales with the loss") {
  ParamStore params;
  params.add("x", Tensor::vector({300.0, 2.0}));
  const LossBuilder loss = [](Tape& t, const ParamStore& p) { return t.sum(t.mul(t.parameter(p, "x"), t.parameter(p, "x"))); };
  const GradCheckReport report = grad_check(loss, params);
  CHECK(report.floor == doctest::Approx(1e-4 * 90004.0));
  CHECK(report.max_rel_error <= 1e-5);
  CHECK(grad_check(loss, params, 1e-6, 0.5).floor == 0.5);

  // A cubic term the tape never sees shows up as a large error.
  const LossBuilder wrong = [](Tape& t, const ParamStore& p) {
    const Var x = t.parameter(p, "x");
    const Var hidden = t.constant(Tensor::vector({t.value(x)[0] * t.value(x)[0] * t.value(x)[0], 0.0}));
    return t.sum(t.add(t.mul(x, x), hidden));
  };
  CHECK(grad_check(wrong, params).max_rel_error > 0.5);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({1e308}));
  CHECK(category_of([&] { tape.scale(x, 10.0); }) == ErrorCategory::kNumeric);
}

TEST_CASE("frozen parameters are constants on the tape") {
  ParamStore params;
  params.add("frozen", Tensor::vector({1.0, 2.0}), false);
  params.add("live", Tensor::vector({3.0, 4.0}));
  Tape tape;
  const Var loss = tape.sum(tape.mul(tape.parameter(params, "frozen"), tape.parameter(params, "live")));
  tape.backward(loss);
  const GradMap grads = tape.parameter_grads();
  CHECK(grads.count("frozen") == 0);
  CHECK(grads.at("live") == Tensor::vector({1.0, 2.0}));
}

TEST_CASE("adam: zero gradient and frozen parameters") {
  ParamStore params;
  params.add("a", Tensor::vector({0.5, -0.25}));
  params.add("b", Tensor::vector({1.5}), false);
  const ParamStore before = params;
  AdamState state;
  state.config.lr = 0.1;
  GradMap grads{{"a", Tensor::vector({0.0, 0.0})}, {"b", Tensor::vector({3.0})}};
  adam_step(params, grads, state);
  CHECK(serialize_params(params) == serialize_params(before));
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step on a scalar") {
  ParamStore params;
  params.add("w", Tensor::vector({2.0}));
  AdamState state;
  state.config.lr = 0.1;
  adam_step(params, {{"w", Tensor::vector({1.0})}}, state);
  // m_hat = v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  CHECK(params.get("w").value[0] == doctest::Approx(2.0 - 0.09999999900000002).epsilon(1e-15));
}

TEST_CASE("adam: lr=0 advances moments but keeps parameters bit-identical") {
  Rng rng(9);
  ParamStore params;
  params.add("w", random_tensor(rng, {3, 3}));
  params.add("v", Tensor::vector({-0.0, 0.0, 1.0}));
  const std::string before = serialize_params(params);
  AdamState state;
  state.config.lr = 0.0;
  for (int i = 0; i < 3; ++i) {
    adam_step(params, {{"w", random_tensor(rng, {3, 3})}, {"v", random_tensor(rng, {3})}}, state);
  }
  CHECK(serialize_params(params) == before);
  CHECK(state.step == 3);
  CHECK(state.first_moment.at("w")[0] != 0.0);
}

TEST_CASE("adam: missing gradient for a trainable parameter") {
  ParamStore params;
  params.add("a", Tensor::vector({1.0}));
  params.add("b", Tensor::vector({1.0}));
  AdamState state;
  CHECK(category_of([&] { adam_step(params, {{"a", Tensor::vector({1.0})}}, state); }) ==
        ErrorCategory::kConsistency);
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping") {
  GradMap grads{{"a", Tensor::vector({3.0})}, {"b", Tensor::vector({4.0})}};
  CHECK(clip_grad_norm(grads, 1.0) == doctest::Approx(5.0));
  CHECK(grads.at("a")[0] == doctest::Approx(0.6));
  CHECK(grads.at("b")[0] == doctest::Approx(0.8));
}

TEST_CASE("forward computations are bit-deterministic") {
  Rng rng(21);
  ParamStore params;
  params.add("w", random_tensor(rng, {8, 8}));
  params.add("x", random_tensor(rng, {8}));
  auto run = [&] {
    Tape t;
    Var h = t.parameter(params, "x");
    for (int i = 0; i < 5; ++i) {
      h = t.tanh(t.matmul(t.parameter(params, "w"), h));
    }
    return t.value(h);
  };
  CHECK(run() == run());
}

TEST_CASE("parameter and optimizer records round-trip") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore params;
    AdamState state;
    state.config.lr = rng.uniform();
    const int count = 1 + static_cast<int>(rng.below(4));
    GradMap grads;
    for (int i = 0; i < count; ++i) {
      const std::string name = "p" + std::to_string(i);
      params.add(name, random_tensor(rng, {1 + rng.below(3), 1 + rng.below(4)}));
      grads.emplace(name, random_tensor(rng, params.get(name).value.shape()));
    }
    adam_step(params, grads, state);

    ByteWriter out;
    write_params(out, params);
    write_adam(out, state);
    const std::string bytes = out.take();
    ByteReader in(bytes, "record");
    const ParamStore restored = read_params(in);
    const AdamState restored_state = read_adam(in);
    CHECK(in.at_end());
    CHECK(serialize_params(restored) == serialize_params(params));
    CHECK(restored_state.step == state.step);
    CHECK(restored_state.first_moment == state.first_moment);
    CHECK(restored_state.second_moment == state.second_moment);

    ByteReader truncated(std::string_view(bytes).substr(0, bytes.size() - 3), "record");
    CHECK(category_of([&] {
            read_params(truncated);
            read_adam(truncated);
          }) == ErrorCategory::kFormat);
  }
}

}  // TEST_SUITE
