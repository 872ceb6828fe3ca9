#include <gtest/gtest.h>

#include "vidkern/quantization.hpp"

using namespace vidkern;

TEST(AveragePool, IsTemporalMean) {
  const FeatureSequence seq(Tensor::matrix({{1, 2}, {3, 6}}));
  EXPECT_EQ(average_pool(seq), Tensor::vector({2, 4}));
}

TEST(FeatureSequence, RequiresRankTwo) { EXPECT_THROW(FeatureSequence(Tensor({2, 2, 2})), ShapeError); }

TEST(Tcp, IdentityInitEqualsAveragePool) {
  SplitMix64 rng(21);
  for (int i = 0; i < 20; ++i) {
    const std::size_t T = 1 + rng.below(10), D = 1 + rng.below(8);
    const FeatureSequence seq(Tensor::uniform({T, D}, rng, -3, 3));
    EXPECT_LT(max_abs_diff(tcp(seq, TCPParams::identity(D)), average_pool(seq)), 1e-12);
  }
}

TEST(Tcp, ShiftKernelHandTrace) {
  TCPParams p = TCPParams::identity(2);
  for (auto& b : p.blocks) {
    b.depthwise = Tensor::matrix({{1, 0, 0}, {1, 0, 0}});
    b.pointwise = Tensor::matrix({{1, 0}, {0, 1}});
  }
  EXPECT_EQ(tcp(FeatureSequence(Tensor::matrix({{1, 0}, {0, 1}})), p), Tensor::vector({3, 0.5}));
  EXPECT_EQ(tcp(FeatureSequence(Tensor::matrix({{0, 1}, {1, 0}})), p), Tensor::vector({0.5, 3}));
}

TEST(Tcp, OrderSensitiveWhereAveragePoolIsNot) {
  SplitMix64 rng(22);
  const TCPParams p = TCPParams::init(3, rng, 0.5);
  const Tensor a = Tensor::uniform({4, 3}, rng);
  Tensor b({4, 3});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 3; ++d) b.at({t, d}) = a.at({3 - t, d});
  EXPECT_LT(max_abs_diff(average_pool(FeatureSequence(a)), average_pool(FeatureSequence(b))), 1e-15);
  EXPECT_GT(max_abs_diff(tcp(FeatureSequence(a), p), tcp(FeatureSequence(b), p)), 1e-6);
}

TEST(Tcp, ShapeErrors) {
  const TCPParams p = TCPParams::identity(3);
  EXPECT_THROW(tcp(FeatureSequence(Tensor({4, 2})), p), ShapeError);
  TCPParams bad = p;
  bad.blocks[2].pointwise = Tensor({3, 2});
  EXPECT_THROW(tcp(FeatureSequence(Tensor({4, 3})), bad), ShapeError);
}

TEST(Quantize, TcpWithoutParamsIsConfigError) {
  Tape tape;
  EXPECT_THROW(quantize(tape.constant(Tensor({2, 2})), Quantizer::TCP, nullptr), ConfigError);
  EXPECT_EQ(quantizer_from_string("TCP"), Quantizer::TCP);
  EXPECT_THROW(quantizer_from_string("max"), ConfigError);
}
