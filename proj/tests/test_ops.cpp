// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "avsync/autodiff.hpp"
#include "avsync/error.hpp"
#include "avsync/ops.hpp"
#include "avsync/param_store.hpp"
#include "support/oracles.hpp"

namespace avsync {
namespace {

using testing::conv3d_oracle;
using testing::max_rel_diff;
using testing::random_tensor;

Tensor identity_matrix(std::size_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) m.at({i, i}) = 1.0;
  return m;
}

TEST(Conv3d, IdentityKernelReproducesInput) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4, 5, 3}, rng);
  Tensor k = Tensor::zeros({1, 1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.at({0, 0, 0, c, c}) = 1.0;
  EXPECT_EQ(kernels::conv3d(x, k, Tensor::zeros({3}), {}), x);
}

TEST(Conv3d, ZeroKernelGivesBias) {
  Rng rng(2);
  const Tensor x = random_tensor({4, 4, 4, 2}, rng);
  const Tensor out = kernels::conv3d(x, Tensor::zeros({2, 2, 2, 2, 3}), Tensor::vector({0.5, -1, 2}), {});
  ASSERT_EQ(out.shape(), (Shape{3, 3, 3, 3}));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], (std::array<double, 3>{0.5, -1, 2})[i % 3]);
}

TEST(Conv3d, MatchesOracleOnReferenceCase) {
  Rng rng(3);
  const Tensor x = random_tensor({4, 4, 4, 2}, rng);
  const Tensor k = random_tensor({2, 2, 2, 2, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor out = kernels::conv3d(x, k, b, {});
  const Tensor ref = conv3d_oracle(x, k, b, {});
  EXPECT_EQ(out.shape(), (Shape{3, 3, 3, 3}));
  EXPECT_LE(max_rel_diff(out, ref), 1e-10);
}

TEST(Conv3d, MatchesOracleOnBackboneGeometries) {
  Rng rng(4);
  struct Case {
    Shape in, k;
    Conv3dOptions o;
  };
  const Case cases[] = {
      {{8, 32, 32, 1}, {3, 3, 3, 1, 8}, {{1, 2, 2}, {1, 1, 1}}},
      {{8, 16, 16, 8}, {3, 3, 3, 8, 12}, {{2, 2, 2}, {1, 1, 1}}},
      {{4, 8, 8, 12}, {3, 3, 3, 12, 12}, {{2, 2, 2}, {1, 1, 1}}},
      {{256, 1, 1, 1}, {8, 1, 1, 1, 4}, {{4, 1, 1}, {2, 0, 0}}},
      {{64, 1, 1, 4}, {8, 1, 1, 4, 4}, {{4, 1, 1}, {2, 0, 0}}},
  };
  for (const Case& c : cases) {
    const Tensor x = random_tensor(c.in, rng);
    const Tensor k = random_tensor(c.k, rng);
    const Tensor b = random_tensor({c.k[4]}, rng);
    EXPECT_LE(max_rel_diff(kernels::conv3d(x, k, b, c.o), conv3d_oracle(x, k, b, c.o)), 1e-10);
  }
}

TEST(Conv3d, SmallSweepMatchesOracle) {
  const auto r = testing::conv_random_cases(11, 10);
  EXPECT_EQ(r.cases, 10u);
  EXPECT_LE(r.max_rel, 1e-10);
}

TEST(Conv3d, ShapeErrors) {
  const Tensor x = Tensor::zeros({2, 2, 2, 2});
  EXPECT_THROW(kernels::conv3d(x, Tensor::zeros({1, 1, 1, 3, 1}), Tensor::zeros({1}), {}), DimensionError);
  EXPECT_THROW(kernels::conv3d(x, Tensor::zeros({1, 1, 1, 2, 1}), Tensor::zeros({2}), {}), DimensionError);
  EXPECT_THROW(kernels::conv3d(x, Tensor::zeros({3, 1, 1, 2, 1}), Tensor::zeros({1}), {}), DimensionError);
  EXPECT_THROW(kernels::conv3d(Tensor::zeros({2, 2, 2}), Tensor::zeros({1, 1, 1, 2, 1}), Tensor::zeros({1}), {}),
               DimensionError);
}

TEST(PointwiseConv, IdentityAndHandArithmetic) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(kernels::pointwise_conv(x, identity_matrix(4), Tensor::zeros({4})), x);
  const Tensor out = kernels::pointwise_conv(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {1, 1}), Tensor::vector({0}));
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_THROW(kernels::pointwise_conv(x, identity_matrix(3), Tensor::zeros({3})), DimensionError);
}

TEST(Relu, Definition) {
  Tape tape;
  Var y = relu(tape.constant(Tensor::vector({-1, 0, 2})));
  EXPECT_EQ(y.value(), Tensor::vector({0, 0, 2}));
  const Tensor pos = Tensor::vector({0, 1, 3.5});
  EXPECT_EQ(relu(tape.constant(pos)).value(), pos);
}

TEST(Dropout, IdentityCasesAndErrors) {
  Tape tape;
  Rng rng(6);
  const Tensor x = Tensor::full({100}, 2.0);
  const std::uint64_t before = rng.state();
  EXPECT_EQ(dropout(tape.constant(x), 0.0, Mode::train, &rng).value(), x);
  EXPECT_EQ(dropout(tape.constant(x), 0.7, Mode::eval, &rng).value(), x);
  EXPECT_EQ(rng.state(), before);
  EXPECT_THROW(dropout(tape.constant(x), 1.0, Mode::train, &rng), ConfigError);
  EXPECT_THROW(dropout(tape.constant(x), -0.1, Mode::train, &rng), ConfigError);
}

TEST(Dropout, InvertedScalingKeepsMean) {
  Tape tape;
  Rng rng(7);
  Var y = dropout(tape.constant(Tensor::full({100000}, 1.0)), 0.5, Mode::train, &rng);
  double sum = 0.0;
  for (double v : y.value().data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    sum += v;
  }
  const double mean = sum / 100000.0;
  EXPECT_GE(mean, 0.98);
  EXPECT_LE(mean, 1.02);
}

TEST(GlobalAvgPool, Examples) {
  Tape tape;
  EXPECT_EQ(global_avg_pool(tape.constant(Tensor::full({2, 3, 2, 2}, 1.25))).value(), Tensor::vector({1.25, 1.25}));
  EXPECT_EQ(global_avg_pool(tape.constant(Tensor({1, 1, 1, 3}, {1, 2, 3}))).value(), Tensor::vector({1, 2, 3}));
  const Tensor seq({2, 2, 2, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(global_avg_pool(tape.constant(seq)).value()[0], 4.5);
}

TEST(Softmax, Examples) {
  Tape tape;
  const Tensor eq = softmax(tape.constant(Tensor::full({4}, 3.0))).value();
  for (double v : eq.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const Tensor s = softmax(tape.constant(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}))).value();
  EXPECT_NEAR(s[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[2], 1.0 / 2.0, 1e-15);
  // max shift keeps large scores finite
  const Tensor big = softmax(tape.constant(Tensor::vector({1000, 1000}))).value();
  EXPECT_DOUBLE_EQ(big[0], 0.5);
}

TEST(WeightedSum, Examples) {
  Tape tape;
  Var f1 = tape.constant(Tensor::vector({1, 2}));
  Var f2 = tape.constant(Tensor::vector({3, 4}));
  const Var fs[] = {f1, f2};
  EXPECT_EQ(weighted_sum(fs, tape.constant(Tensor::vector({0.25, 0.75}))).value(), Tensor::vector({2.5, 3.5}));
  EXPECT_EQ(weighted_sum(fs, tape.constant(Tensor::vector({0.5, 0.5}))).value(), Tensor::vector({2, 3}));
  EXPECT_EQ(weighted_sum(fs, tape.constant(Tensor::vector({0, 1}))).value(), Tensor::vector({3, 4}));
  EXPECT_THROW(weighted_sum(fs, tape.constant(Tensor::vector({1, 0, 0}))), DimensionError);
}

TEST(Dense, IdentityAndBias) {
  Tape tape;
  const Tensor x = Tensor::vector({1, -2, 3});
  EXPECT_EQ(dense(tape.constant(x), tape.constant(identity_matrix(3)), tape.constant(Tensor::zeros({3}))).value(), x);
  EXPECT_EQ(dense(tape.constant(x), tape.constant(Tensor::zeros({3, 2})), tape.constant(Tensor::vector({4, 5})))
                .value(),
            Tensor::vector({4, 5}));
}

TEST(CrossEntropy, Examples) {
  Tape tape;
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({0.3, 0.3})), 1).value()[0], std::numbers::ln2, 1e-15);
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({1, 0})), 0).value()[0], 0.313262, 1e-6);
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({1, 0})), 0).value()[0], std::log1p(std::exp(-1.0)), 1e-15);
  double prev = INFINITY;
  for (double m : {1.0, 5.0, 20.0, 30.0}) {
    const double l = cross_entropy(tape.constant(Tensor::vector({m, 0})), 0).value()[0];
    EXPECT_LT(l, prev);
    EXPECT_GE(l, 0.0);
    prev = l;
  }
  // large margins saturate to exactly zero instead of overflowing
  EXPECT_EQ(cross_entropy(tape.constant(Tensor::vector({800, 0})), 0).value()[0], 0.0);
  EXPECT_THROW(cross_entropy(tape.constant(Tensor::vector({1, 0})), 2), ContractError);
  EXPECT_THROW(cross_entropy(tape.constant(Tensor::vector({1, 0, 0})), 0), DimensionError);
}

TEST(Backward, LinearAndQuadratic) {
  ParamStore store;
  const std::size_t slot = store.add("p", Tensor::vector({1, -2, 3}));
  {
    Tape tape;
    tape.backward(sum(tape.param(store, slot)), store);
    EXPECT_EQ(store.grad(slot), Tensor::vector({1, 1, 1}));
  }
  store.zero_grad();
  {
    Tape tape;
    Var p = tape.param(store, slot);
    tape.backward(sum(mul(p, p)), store);
    EXPECT_EQ(store.grad(slot), Tensor::vector({2, -4, 6}));
  }
}

TEST(Backward, NonScalarIsContractError) {
  Tape tape;
  Var v = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Backward, SharedInputsAccumulate) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({2}));
  Var y = add(mul(x, x), scale(x, 3.0));
  tape.backward(sum(y));
  EXPECT_EQ(tape.grad(x)[0], 7.0);
}

TEST(Shapes, PermuteStackConcat) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const std::size_t axes[] = {1, 0};
  EXPECT_EQ(permute(x, axes).value(), Tensor({3, 2}, {1, 4, 2, 5, 3, 6}));
  const Var xs[] = {x, x};
  EXPECT_EQ(stack(xs).shape(), (Shape{2, 2, 3}));

  Rng rng(8);
  Var v = tape.constant(random_tensor({2, 3, 2, 4}, rng));
  Var a = tape.constant(random_tensor({2, 5}, rng));
  const Tensor c = concat_replicated(v, a).value();
  ASSERT_EQ(c.shape(), (Shape{2, 3, 2, 9}));
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t w = 0; w < 3; ++w)
      for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t ch = 0; ch < 4; ++ch) EXPECT_EQ(c.at({h, w, t, ch}), v.value().at({h, w, t, ch}));
        for (std::size_t ch = 0; ch < 5; ++ch) EXPECT_EQ(c.at({h, w, t, 4 + ch}), a.value().at({t, ch}));
      }
  EXPECT_THROW(concat_replicated(v, tape.constant(Tensor::zeros({3, 5}))), DimensionError);
}

}  // namespace
}  // namespace avsync
