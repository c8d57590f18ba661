// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "avsync/error.hpp"
#include "avsync/grad_check.hpp"
#include "avsync/ops.hpp"
#include "avsync/param_store.hpp"
#include "support/oracles.hpp"

namespace avsync {
namespace {

using testing::random_tensor;

TEST(ParamStore, NamesAndLookup) {
  ParamStore s;
  EXPECT_EQ(s.add("a", Tensor::zeros({2})), 0u);
  EXPECT_EQ(s.add("b", Tensor::zeros({3, 2})), 1u);
  EXPECT_EQ(s.scalar_count(), 8u);
  EXPECT_EQ(s.index_of("b"), 1u);
  EXPECT_FALSE(s.find("c").has_value());
  EXPECT_THROW(s.add("a", Tensor::zeros({1})), ConfigError);
  EXPECT_EQ(s.grad(1).shape(), (Shape{3, 2}));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore s;
  s.add("w", Tensor::vector({1.5, -2.0}));
  const Tensor before = s.value(0);
  adam_step(s, {});
  EXPECT_EQ(s.value(0), before);
  EXPECT_EQ(s.step(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02, 1e-3}) {
    ParamStore s;
    s.add("w", Tensor::vector({0.5}));
    s.grad(0)[0] = g;
    AdamConfig cfg;
    cfg.lr = 0.01;
    adam_step(s, cfg);
    const double delta = s.value(0)[0] - 0.5;
    EXPECT_NEAR(std::abs(delta), cfg.lr, cfg.lr * 1e-4) << g;
    EXPECT_EQ(std::signbit(delta), !std::signbit(g));
    EXPECT_EQ(s.grad(0)[0], 0.0);
  }
}

TEST(Adam, MatchesHandComputedSecondStep) {
  ParamStore s;
  s.add("w", Tensor::vector({1.0}));
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  s.grad(0)[0] = 1.0;
  adam_step(s, cfg);
  s.grad(0)[0] = -2.0;
  adam_step(s, cfg);
  double w = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {1.0, -2.0};
  for (int t = 1; t <= 2; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(s.value(0)[0], w, 1e-14);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    ParamStore s;
    Rng rng(12);
    s.add("w", random_tensor({4, 3}, rng));
    for (int step = 0; step < 20; ++step) {
      for (double& g : s.grad(0).data()) g = rng.uniform(-1, 1);
      adam_step(s, {});
    }
    return s.value(0);
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsBadHyperparameters) {
  ParamStore s;
  s.add("w", Tensor::vector({1.0}));
  EXPECT_THROW(adam_step(s, AdamConfig{0.0}), ConfigError);
  EXPECT_THROW(adam_step(s, AdamConfig{-1e-3}), ConfigError);
  EXPECT_THROW(adam_step(s, AdamConfig{1e-3, 1.0}), ConfigError);
  EXPECT_THROW(adam_step(s, AdamConfig{1e-3, 0.9, -0.1}), ConfigError);
}

// y = W x + b, loss = sum(y * c): exact under central differences.
LossBuilder linear_loss(const Tensor& x, const Tensor& c) {
  return [x, c](Tape& tape, const ParamStore& store) {
    Var y = dense(tape.constant(x), tape.param(store, 0), tape.param(store, 1));
    return sum(mul(y, tape.constant(c)));
  };
}

TEST(GradCheck, LinearModelIsExact) {
  Rng rng(13);
  ParamStore s;
  s.add("w", random_tensor({5, 3}, rng));
  s.add("b", random_tensor({3}, rng));
  const Tensor before = s.value(0);
  GradCheckOptions o;
  o.samples_per_tensor = 0;
  const auto r = grad_check(linear_loss(random_tensor({5}, rng), random_tensor({3}, rng)), s, o);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coordinates, 18u);
  EXPECT_EQ(s.value(0), before);
}

TEST(GradCheck, ReluNetworkAwayFromKinks) {
  Rng rng(14);
  ParamStore s;
  s.add("w1", random_tensor({6, 8}, rng));
  s.add("b1", random_tensor({8}, rng, 0.5, 1.0));
  s.add("w2", random_tensor({8, 2}, rng));
  s.add("b2", random_tensor({2}, rng));
  const Tensor x = random_tensor({6}, rng);
  LossBuilder loss = [x](Tape& tape, const ParamStore& store) {
    Var h = relu(dense(tape.constant(x), tape.param(store, 0), tape.param(store, 1)));
    Var z = dense(h, tape.param(store, 2), tape.param(store, 3));
    return cross_entropy(z, 1);
  };
  GradCheckOptions o;
  o.samples_per_tensor = 0;
  o.skip_kink_crossings = false;
  const auto r = grad_check(loss, s, o);
  EXPECT_LE(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.skipped_kinks, 0u);
}

TEST(GradCheck, DetectsDoubledGradient) {
  Rng rng(15);
  ParamStore s;
  s.add("w", random_tensor({4, 2}, rng));
  s.add("b", random_tensor({2}, rng));
  const LossBuilder loss = linear_loss(random_tensor({4}, rng), random_tensor({2}, rng));
  std::vector<Tensor> analytic = reverse_gradients(loss, s);
  for (Tensor& t : analytic)
    for (double& g : t.data()) g *= 2.0;
  const auto r = grad_check_against(loss, s, analytic, {});
  EXPECT_NEAR(r.max_rel_error, 1.0 / 3.0, 1e-6);
  EXPECT_GT(r.max_rel_error, 1e-3);
}

TEST(GradCheck, KinkCrossingsAreSkipped) {
  // relu(w) at w = 2e-4 with h = 1e-3: the quotient is 1.2e-3 / 2e-3 = 0.6
  // against an analytic 1, a relative error of 0.25.
  ParamStore s;
  s.add("w", Tensor::vector({2e-4, 1.0}));
  LossBuilder loss = [](Tape& tape, const ParamStore& store) { return sum(relu(tape.param(store, 0))); };
  GradCheckOptions o;
  o.samples_per_tensor = 0;
  o.skip_kink_crossings = false;
  EXPECT_NEAR(grad_check(loss, s, o).max_rel_error, 0.25, 1e-9);
  o.skip_kink_crossings = true;
  const auto r = grad_check(loss, s, o);
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_LE(r.max_rel_error, 1e-9);
}

TEST(GradCheck, NonFiniteLossIsNumericError) {
  ParamStore s;
  s.add("w", Tensor::vector({1e300}));
  LossBuilder loss = [](Tape& tape, const ParamStore& store) {
    Var w = tape.param(store, 0);
    return sum(mul(w, w));
  };
  EXPECT_THROW(grad_check(loss, s, {}), NumericError);
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_NEAR(relative_error(2.0, 1.0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-9 / 1e-8, 1e-15);
}

}  // namespace
}  // namespace avsync
