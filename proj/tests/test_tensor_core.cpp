#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vidkern/core/gradcheck.hpp"
#include "vidkern/core/ops.hpp"

using namespace vidkern;

namespace {

Shape random_video_dims(SplitMix64& rng) {
  return {1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)};
}

}  // namespace

TEST(Tensor, RejectsBadDims) {
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(MatMul, IdentityAndDefinition) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(eye, m), m);
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}})), Tensor::matrix({{3}, {7}}));
}

TEST(MatMul, MatchesNaiveLoop) {
  SplitMix64 rng(11);
  const Tensor a = Tensor::uniform({4, 5}, rng);
  const Tensor b = Tensor::uniform({5, 3}, rng);
  EXPECT_EQ(matmul(a, b), oracle::matmul(a, b));
}

TEST(MatMul, ShapeErrorNamesBothDims) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("k = 3"), std::string::npos);
    EXPECT_NE(msg.find("k = 4"), std::string::npos);
  }
}

TEST(ConvSpatial, IdentityKernel) {
  SplitMix64 rng(1);
  const Tensor x = Tensor::uniform({2, 3, 2, 4, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
  EXPECT_EQ(conv_spatial(x, w), x);
}

TEST(ConvSpatial, ConstantInputInteriorSums) {
  const Tensor x({1, 1, 1, 5, 5}, 7.0);
  const Tensor w({1, 1, 3, 3}, 1.0);
  const Tensor y = conv_spatial(x, w);
  for (std::size_t h = 1; h < 4; ++h)
    for (std::size_t q = 1; q < 4; ++q) EXPECT_DOUBLE_EQ(y.at({0, 0, 0, h, q}), 63.0);
  EXPECT_DOUBLE_EQ(y.at({0, 0, 0, 0, 0}), 28.0);  // corner sees 4 cells
}

TEST(ConvSpatial, EvenKernelIsConfigError) {
  EXPECT_THROW(conv_spatial(Tensor({1, 1, 1, 3, 3}), Tensor({1, 1, 2, 3})), ConfigError);
  EXPECT_THROW(conv_spatial(Tensor({1, 2, 1, 3, 3}), Tensor({1, 1, 3, 3})), ShapeError);
}

TEST(ConvSpatial, MatchesNaiveLoop) {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape d = random_video_dims(rng);
    const Tensor x = Tensor::uniform(d, rng);
    const Tensor w = Tensor::uniform({1 + rng.below(3), d[1], 3, 1 + 2 * rng.below(2)}, rng);
    EXPECT_LT(max_abs_diff(conv_spatial(x, w), oracle::conv_spatial(x, w)), 1e-12);
  }
}

TEST(ConvTemporal, IdentityAndSingleStep) {
  SplitMix64 rng(3);
  const Tensor x = Tensor::uniform({1, 2, 3, 2, 2}, rng);
  Tensor w({2, 2, 1});
  w.at({0, 0, 0}) = 1.0;
  w.at({1, 1, 0}) = 1.0;
  EXPECT_EQ(conv_temporal(x, w), x);

  // T = 1: only the center tap sees data.
  const Tensor x1 = Tensor::uniform({1, 2, 1, 2, 2}, rng);
  const Tensor k = Tensor::uniform({3, 2, 3}, rng);
  const Tensor y = conv_temporal(x1, k);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t q = 0; q < 2; ++q) {
        const double expect = k.at({o, 0, 1}) * x1.at({0, 0, 0, h, q}) + k.at({o, 1, 1}) * x1.at({0, 1, 0, h, q});
        EXPECT_NEAR(y.at({0, o, 0, h, q}), expect, 1e-15);
      }
}

TEST(ConvTemporal, MatchesNaiveLoop) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Shape d = random_video_dims(rng);
    const Tensor x = Tensor::uniform(d, rng);
    const Tensor w = Tensor::uniform({1 + rng.below(3), d[1], 3}, rng);
    EXPECT_LT(max_abs_diff(conv_temporal(x, w), oracle::conv_temporal(x, w)), 1e-12);
  }
  EXPECT_THROW(conv_temporal(Tensor({1, 1, 2, 1, 1}), Tensor({1, 1, 4})), ConfigError);
}

TEST(Depthwise, ImpulseOnesAndOracle) {
  SplitMix64 rng(5);
  const Tensor seq = Tensor::uniform({6, 3}, rng);
  Tensor impulse({3, 3});
  for (std::size_t d = 0; d < 3; ++d) impulse.at({d, 1}) = 1.0;
  EXPECT_EQ(depthwise_temporal_conv(seq, impulse), seq);

  const Tensor ones_seq({5, 2}, 1.0);
  const Tensor y = depthwise_temporal_conv(ones_seq, Tensor({2, 3}, 1.0));
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_EQ(y.at({0, d}), 2.0);
    EXPECT_EQ(y.at({2, d}), 3.0);
    EXPECT_EQ(y.at({4, d}), 2.0);
  }

  const Tensor k = Tensor::uniform({3, 3}, rng);
  EXPECT_EQ(depthwise_temporal_conv(seq, k), oracle::depthwise(seq, k));
  EXPECT_THROW(depthwise_temporal_conv(seq, Tensor({2, 3})), ShapeError);
}

TEST(Elementwise, Definitions) {
  EXPECT_EQ(relu(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
  EXPECT_EQ(mean_axis(Tensor::matrix({{1, 3}, {3, 5}}), 0), Tensor::vector({2, 4}));
  EXPECT_EQ(sigmoid(Tensor::vector({0})), Tensor::vector({0.5}));
  EXPECT_EQ(max_axis(Tensor::matrix({{1, 7}, {3, 5}}), 1), Tensor::vector({7, 5}));
  EXPECT_EQ(add(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{10, 20}})), Tensor::matrix({{11, 22}, {13, 24}}));
  EXPECT_THROW(add(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2, 3}})), ShapeError);
  const Tensor a = Tensor::matrix({{1, 2}});
  const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  EXPECT_EQ(concat(std::vector<const Tensor*>{&a, &b}, 0), Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  EXPECT_THROW(concat(std::vector<const Tensor*>{&a, &b}, 1), ShapeError);
}

TEST(Softmax, Examples) {
  const Tensor u = softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const double c = -3.7;
  const Tensor p = softmax(Tensor::vector({c, c + std::log(2.0)}), 0);
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
  const Tensor big = softmax(Tensor::vector({1000, 1001}), 0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(big[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(big[1], e / (1.0 + e), 1e-15);
}

TEST(Softmax, InvariantsOnRandomSlices) {
  SplitMix64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = Tensor::uniform({3, 4, 5}, rng, -20, 20);
    const std::size_t axis = rng.below(3);
    const Tensor y = softmax(x, axis);
    const Tensor shifted = softmax(add(x, Tensor({1, 1, 1}, 123.25)), axis);
    EXPECT_LT(max_abs_diff(y, shifted), 1e-12);
    for (double v : y.data()) EXPECT_GE(v, 0.0);
    const Tensor sums = mean_axis(y, axis);
    for (double s : sums.data()) EXPECT_NEAR(s * static_cast<double>(x.dim(axis)), 1.0, 1e-12);
  }
}

TEST(Backward, SquareConstantAndSharedInput) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  EXPECT_DOUBLE_EQ(tape.backward(mul(x, x))[x.id].item(), 6.0);

  Tape t2;
  Var p = t2.leaf(Tensor::matrix({{1, 2}}));
  Var c = t2.constant(Tensor::scalar(5.0));
  const Gradients g = t2.backward(c);
  EXPECT_EQ(g[p.id], Tensor({1, 2}));

  // x feeds two consumers: loss = (x*1) * (x+0) must give 2x.
  Tape t3;
  Var y = t3.leaf(Tensor::scalar(-1.5));
  Var loss = mul(scale(y, 1.0), add_scalar(y, 0.0));
  EXPECT_DOUBLE_EQ(t3.backward(loss)[y.id].item(), -3.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, NodeIdsIncreaseAndGradDimsMatch) {
  SplitMix64 rng(7);
  Tape tape;
  Var a = tape.leaf(Tensor::uniform({3, 4}, rng));
  Var b = tape.leaf(Tensor::uniform({4, 2}, rng));
  Var m = matmul(a, b);
  Var loss = sum_all(tanh(m));
  EXPECT_LT(a.id, b.id);
  EXPECT_LT(b.id, m.id);
  EXPECT_LT(m.id, loss.id);
  const Gradients g = tape.backward(loss);
  EXPECT_EQ(g[a.id].dims(), a.dims());
  EXPECT_EQ(g[b.id].dims(), b.dims());
}

TEST(Backward, MatmulSumMatchesFiniteDifferences) {
  SplitMix64 rng(8);
  GradCheckOptions opt;
  opt.step = 1e-6;
  opt.tolerance = 1e-6;
  const auto report = check_gradients(
      "sum(matmul)", [](Tape&, const std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
      {Tensor::uniform({3, 4}, rng), Tensor::uniform({4, 5}, rng)}, rng, opt);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Backward, SharedParamBindsOnce) {
  Tensor w = Tensor::scalar(2.0);
  Tape tape;
  Var a = tape.param(w);
  Var b = tape.param(w);
  EXPECT_EQ(a.id, b.id);
  const Gradients g = tape.backward(mul(a, b));
  EXPECT_DOUBLE_EQ(g.of(w).item(), 4.0);
}
