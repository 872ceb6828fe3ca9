#include <gtest/gtest.h>

#include "vidkern/backbone.hpp"

using namespace vidkern;

namespace {

Tensor reference_p3d(const Tensor& x, const P3DBlockParams& p) {
  auto pw = [](const Tensor& in, const Tensor& w) { return conv_spatial(in, w.reshaped({w.dim(0), w.dim(1), 1, 1})); };
  const Tensor h = relu(pw(x, p.reduce));
  Tensor y;
  switch (p.variant) {
    case P3DVariant::A: y = conv_temporal(conv_spatial(h, p.spatial), p.temporal); break;
    case P3DVariant::B: y = add(conv_spatial(h, p.spatial), conv_temporal(h, p.temporal)); break;
    case P3DVariant::C: {
      const Tensor s = conv_spatial(h, p.spatial);
      y = add(s, conv_temporal(s, p.temporal));
      break;
    }
  }
  return relu(add(x, pw(relu(y), p.expand)));
}

}  // namespace

TEST(P3DBlock, VariantsMatchKernelComposition) {
  SplitMix64 rng(3);
  const Tensor x = Tensor::uniform({2, 4, 3, 4, 4}, rng);
  for (auto v : {P3DVariant::A, P3DVariant::B, P3DVariant::C}) {
    const auto p = P3DBlockParams::init(v, 4, 2, rng);
    EXPECT_EQ(p3d_block(x, p), reference_p3d(x, p));
  }
}

TEST(P3DBlock, VariantsDiffer) {
  SplitMix64 rng(4);
  const Tensor x = Tensor::uniform({1, 4, 3, 4, 4}, rng);
  auto a = P3DBlockParams::init(P3DVariant::A, 4, 2, rng);
  auto b = a;
  b.variant = P3DVariant::B;
  auto c = a;
  c.variant = P3DVariant::C;
  EXPECT_NE(p3d_block(x, a), p3d_block(x, b));
  EXPECT_NE(p3d_block(x, b), p3d_block(x, c));
}

TEST(P3DBlock, ZeroExpansionIsReluOfInput) {
  SplitMix64 rng(5);
  const Tensor x = Tensor::uniform({1, 4, 2, 3, 3}, rng);
  auto p = P3DBlockParams::init(P3DVariant::C, 4, 2, rng);
  p.expand.fill(0.0);
  EXPECT_EQ(p3d_block(x, p), relu(x));
}

TEST(P3DBlock, RejectsInconsistentParams) {
  SplitMix64 rng(6);
  auto p = P3DBlockParams::init(P3DVariant::A, 4, 2, rng);
  p.temporal = Tensor({2, 2, 2});
  EXPECT_THROW(p3d_block(Tensor({1, 4, 2, 2, 2}), p), ShapeError);
  const auto q = P3DBlockParams::init(P3DVariant::A, 4, 2, rng);
  EXPECT_THROW(p3d_block(Tensor({1, 3, 2, 2, 2}), q), ShapeError);
}

TEST(LGDBlock, ZeroInjectionReducesToLocalBlock) {
  SplitMix64 rng(7);
  auto p = LGDBlockParams::init(P3DVariant::B, 4, 2, rng);
  p.g2l.fill(0.0);
  const Tensor local = Tensor::uniform({2, 4, 2, 3, 3}, rng);
  const Tensor global = Tensor::uniform({2, 4}, rng);
  const auto [l, g] = lgd_block(local, global, p);
  EXPECT_EQ(l, p3d_block(local, p.p3d));
  const Tensor pooled = mean_axis(l.reshaped({2, 4, 18}), 2);
  EXPECT_LT(max_abs_diff(g, matmul(concat(std::vector<const Tensor*>{&global, &pooled}, 1), transpose(p.l2g))), 1e-14);
}

TEST(LGDBlock, GlobalShapeChecked) {
  SplitMix64 rng(8);
  const auto p = LGDBlockParams::init(P3DVariant::A, 4, 2, rng);
  EXPECT_THROW(lgd_block(Tensor({1, 4, 2, 2, 2}), Tensor({1, 3}), p), ShapeError);
}

TEST(Backbone, ToyForwardShape) {
  SplitMix64 rng(9);
  BackboneConfig cfg = BackboneConfig::toy();
  cfg.frames = 4;
  cfg.height = 6;
  cfg.width = 6;
  const auto params = BackboneParams::init(cfg, rng);
  const Tensor y = backbone_forward(Tensor::uniform({2, 3, 4, 6, 6}, rng), cfg, params);
  EXPECT_EQ(y.dims(), (Shape{2, 4, 16}));
  for (double v : y.data()) EXPECT_GE(v, 0.0);
}

TEST(Backbone, LgdStageRuns) {
  SplitMix64 rng(10);
  BackboneConfig cfg;
  cfg.frames = 2;
  cfg.height = 3;
  cfg.width = 3;
  cfg.stages = {{6, 2, BlockKind::LGD, P3DVariant::C}};
  const auto params = BackboneParams::init(cfg, rng);
  EXPECT_EQ(params.stages[0].lgd.size(), 2u);
  EXPECT_EQ(backbone_forward(Tensor::uniform({1, 3, 2, 3, 3}, rng), cfg, params).dims(), (Shape{1, 2, 6}));
}

TEST(Backbone, ClipShapeMustMatchConfig) {
  SplitMix64 rng(11);
  const auto cfg = BackboneConfig::toy();
  const auto params = BackboneParams::init(cfg, rng);
  EXPECT_THROW(backbone_forward(Tensor({1, 3, 8, 16, 16}), cfg, params), ShapeError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig cfg;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = BackboneConfig::toy();
  cfg.stages[0].width = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(block_kind_from_string("P3D-D"), ConfigError);
  EXPECT_EQ(block_kind_from_string("LGD"), BlockKind::LGD);
  EXPECT_EQ(to_string(BlockKind::P3DB), "P3D-B");
}
