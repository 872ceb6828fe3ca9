#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vidkern/lstr.hpp"

using namespace vidkern;

namespace {

Box random_box(SplitMix64& rng) {
  const double x1 = rng.uniform(0.0, 0.9), y1 = rng.uniform(0.0, 0.9);
  return {x1, y1, rng.uniform(x1 + 0.05, 1.0), rng.uniform(y1 + 0.05, 1.0)};
}

std::vector<BoxProposal> proposals(SplitMix64& rng, std::size_t clips, std::size_t n) {
  std::vector<BoxProposal> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({rng.below(clips), random_box(rng), rng.uniform(), {}});
  return out;
}

// Boxes on a 0.1 grid so that score and IoU ties are common.
Box grid_box(SplitMix64& rng) {
  const std::size_t x1 = rng.below(8), y1 = rng.below(8);
  const std::size_t x2 = x1 + 1 + rng.below(10 - x1 - 1), y2 = y1 + 1 + rng.below(10 - y1 - 1);
  return {x1 / 10.0, y1 / 10.0, x2 / 10.0, y2 / 10.0};
}

}  // namespace

TEST(RoiPool, MatchesOracle) {
  SplitMix64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const std::size_t C = 1 + rng.below(3), T = 1 + rng.below(4), H = 1 + rng.below(5), W = 1 + rng.below(5);
    const Tensor f = Tensor::uniform({C, T, H, W}, rng);
    const Box b = random_box(rng);
    const PoolExtents e{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    EXPECT_EQ(roi_pool_3d(f, b, e), oracle::roi_pool_3d(f, b.x1, b.y1, b.x2, b.y2, e.t, e.h, e.w));
  }
}

TEST(RoiPool, InvalidBoxes) {
  const Tensor f({1, 2, 3, 3});
  EXPECT_THROW(roi_pool_3d(f, Box{0.5, 0.1, 0.4, 0.9}, PoolExtents{}), ContractError);
  EXPECT_THROW(roi_pool_3d(f, Box{-0.1, 0.1, 0.4, 0.9}, PoolExtents{}), ContractError);
  EXPECT_THROW(roi_pool_3d(Tensor({2, 3, 3}), Box{0.1, 0.1, 0.4, 0.9}, PoolExtents{}), ShapeError);
}

TEST(Attention, SumsToOne) {
  SplitMix64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const Tensor feat = Tensor::uniform({3, 2, 3, 4}, rng, -3, 3);
    const Tensor a = adaptive_attention(Tensor::uniform({5}, rng), feat, Tensor::uniform({5, 3}, rng));
    EXPECT_EQ(a.dims(), (Shape{2, 3, 4}));
    double s = 0.0;
    for (double v : a.data()) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, UniformWeightsGiveChannelMean) {
  SplitMix64 rng(3);
  const Tensor feat = Tensor::uniform({3, 2, 2, 2}, rng);
  const Tensor ctx = attention_pool_3d(feat, Tensor({2, 2, 2}, 1.0 / 8.0));
  const Tensor mean = mean_axis(feat.reshaped({3, 8}), 1);
  EXPECT_LT(max_abs_diff(ctx, mean), 1e-15);
}

TEST(Graph, SymmetricWithUnitSelfLoops) {
  SplitMix64 rng(4);
  for (double lambda : {0.0, 0.5, 1.0}) {
    auto props = proposals(rng, 3, 6);
    for (auto& p : props) p.actor = Tensor::uniform({4}, rng);
    const auto g = build_relation_graph(props, lambda);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(g.adjacency.at({i, i}), 1.0);
      double row = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(g.adjacency.at({i, j}), g.adjacency.at({j, i}));
        EXPECT_EQ(g.normalized.at({i, j}), g.normalized.at({j, i}));
        EXPECT_GE(g.adjacency.at({i, j}), 0.0);
        EXPECT_LE(g.adjacency.at({i, j}), 1.0);
        row += g.adjacency.at({i, j});
      }
      EXPECT_NEAR(g.normalized.at({i, i}), 1.0 / row, 1e-12);
    }
  }
}

TEST(Graph, EdgeFormula) {
  std::vector<BoxProposal> p{{0, {0.0, 0.0, 0.5, 0.5}, 1, Tensor::vector({1, 0})},
                             {0, {0.25, 0.0, 0.75, 0.5}, 1, Tensor::vector({1, 1})}};
  const auto g = build_relation_graph(p, 0.4);
  EXPECT_NEAR(g.adjacency.at({0, 1}), 0.4 * std::sqrt(0.5) + 0.6 / 3.0, 1e-15);
  p[1].actor = Tensor::vector({-1, 0});
  EXPECT_NEAR(build_relation_graph(p, 1.0).adjacency.at({0, 1}), 0.0, 0.0);
  p[1].actor = Tensor();
  EXPECT_THROW(build_relation_graph(p, 0.5), ContractError);
}

TEST(Gcn, IdentityAdjacencyAndWeights) {
  SplitMix64 rng(5);
  const Tensor x = Tensor::uniform({4, 3}, rng, 0.0, 1.0);
  Tensor eye3({3, 3}), eye4({4, 4});
  for (std::size_t i = 0; i < 3; ++i) eye3.at({i, i}) = 1.0;
  for (std::size_t i = 0; i < 4; ++i) eye4.at({i, i}) = 1.0;
  EXPECT_EQ(gcn_layer(x, eye4, eye3), x);
}

TEST(Gcn, HandCase) {
  const Tensor ahat({2, 2}, 0.5);
  const Tensor x = Tensor::matrix({{2, 0}, {0, 2}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(gcn_layer(x, ahat, eye), Tensor::matrix({{1, 1}, {1, 1}}));
}

TEST(Gcn, PermutationEquivariant) {
  SplitMix64 rng(6);
  const std::size_t M = 5;
  const Tensor x = Tensor::uniform({M, 3}, rng);
  Tensor a = Tensor::uniform({M, M}, rng, 0.0, 1.0);
  const Tensor w = Tensor::uniform({3, 3}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor px({M, 3}), pa({M, M});
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t d = 0; d < 3; ++d) px.at({i, d}) = x.at({perm[i], d});
    for (std::size_t j = 0; j < M; ++j) pa.at({i, j}) = a.at({perm[i], perm[j]});
  }
  const Tensor y = gcn_layer(x, a, w), py = gcn_layer(px, pa, w);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(py.at({i, d}), y.at({perm[i], d}), 1e-12);
}

TEST(Forward, SingleProposalHandRecomputation) {
  SplitMix64 rng(7);
  LSTRConfig cfg;
  cfg.channels = 3;
  cfg.pool = {1, 2, 2};
  cfg.actor_dim = 4;
  cfg.classes = 2;
  cfg.lambda = 1.0;
  const LSTRParams prm = LSTRParams::init(cfg, rng);
  const Tensor feat = Tensor::uniform({3, 2, 4, 4}, rng);
  std::vector<ClipFeatureMap> clips{{0, feat}};
  std::vector<BoxProposal> props{{0, {0.1, 0.2, 0.8, 0.9}, 0.9, {}}};
  const Tensor scores = lstr_forward(clips, props, cfg, prm);

  const Tensor pooled = oracle::roi_pool_3d(feat, 0.1, 0.2, 0.8, 0.9, 1, 2, 2);
  std::vector<double> actor(4, 0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < pooled.size(); ++i) actor[j] += pooled[i] * prm.actor_proj.at({i, j});
    actor[j] = std::max(0.0, actor[j]);
  }
  std::vector<double> theta(3, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 4; ++j) theta[c] += actor[j] * prm.kernel_gen.at({j, c});
  std::vector<double> logit(32, 0.0);
  double mx = -1e300;
  for (std::size_t q = 0; q < 32; ++q) {
    for (std::size_t c = 0; c < 3; ++c) logit[q] += theta[c] * feat[c * 32 + q];
    mx = std::max(mx, logit[q]);
  }
  double z = 0.0;
  for (double& l : logit) z += (l = std::exp(l - mx));
  std::vector<double> node(actor);
  for (std::size_t c = 0; c < 3; ++c) {
    double ctx = 0.0;
    for (std::size_t q = 0; q < 32; ++q) ctx += logit[q] / z * feat[c * 32 + q];
    node.push_back(ctx);
  }
  for (const Tensor& w : prm.gcn) {
    std::vector<double> next(7, 0.0);
    for (std::size_t j = 0; j < 7; ++j) {
      for (std::size_t i = 0; i < 7; ++i) next[j] += node[i] * w.at({i, j});
      next[j] = std::max(0.0, next[j]);
    }
    node = next;
  }
  ASSERT_EQ(scores.dims(), (Shape{1, 2}));
  for (std::size_t k = 0; k < 2; ++k) {
    double s = prm.bias.at({0, k});
    for (std::size_t i = 0; i < 7; ++i) s += node[i] * prm.classifier.at({i, k});
    EXPECT_NEAR(scores.at({0, k}), 1.0 / (1.0 + std::exp(-s)), 1e-12);
  }
  EXPECT_EQ(props[0].actor.size(), 4u);
}

TEST(Forward, ShapesAndErrors) {
  SplitMix64 rng(8);
  LSTRConfig cfg;
  const LSTRParams prm = LSTRParams::init(cfg, rng);
  std::vector<ClipFeatureMap> clips{{0, Tensor::uniform({8, 2, 4, 4}, rng)}, {1, Tensor::uniform({8, 2, 4, 4}, rng)}};
  auto props = proposals(rng, 2, 5);
  const Tensor s = lstr_forward(clips, props, cfg, prm);
  EXPECT_EQ(s.dims(), (Shape{5, 3}));
  for (double v : s.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
  props[0].clip = 7;
  EXPECT_THROW(lstr_forward(clips, props, cfg, prm), DataError);
  clips[1].feat = Tensor({4, 2, 4, 4});
  EXPECT_THROW(lstr_forward(clips, props, cfg, prm), ShapeError);
  cfg.lambda = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Bce, MatchesClosedForm) {
  Tape tape;
  const Tensor p = Tensor::matrix({{0.8, 0.3}});
  const Tensor t = Tensor::matrix({{1, 0}});
  const double loss = multilabel_bce(tape.constant(p), t).value().item();
  EXPECT_NEAR(loss, -(std::log(0.8) + std::log(0.7)) / 2.0, 1e-10);
  EXPECT_EQ(two_stream_average(p, Tensor::matrix({{0.2, 0.7}})), Tensor::matrix({{0.5, 0.5}}));
}

TEST(FrameMap, MatchesBruteForce) {
  SplitMix64 rng(9);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<FrameDetection> dets;
    std::vector<FrameGroundTruth> gts;
    std::vector<oracle::Det> od;
    std::vector<oracle::Gt> og;
    const std::size_t G = 1 + rng.below(4), D = rng.below(11);
    for (std::size_t i = 0; i < G; ++i) {
      const FrameGroundTruth g{rng.below(3), rng.below(2), grid_box(rng)};
      gts.push_back(g);
      og.push_back({g.frame, g.cls, g.box.x1, g.box.y1, g.box.x2, g.box.y2});
    }
    for (std::size_t i = 0; i < D; ++i) {
      Box b = grid_box(rng);
      if (rng.below(2)) {
        const auto& g = gts[rng.below(G)];
        b = g.box;
      }
      const FrameDetection d{rng.below(3), rng.below(2), b, static_cast<double>(rng.below(4)) / 4.0};
      dets.push_back(d);
      od.push_back({d.frame, d.cls, b.x1, b.y1, b.x2, b.y2, d.score});
    }
    EXPECT_EQ(frame_map(dets, gts), oracle::frame_map(od, og)) << "instance " << inst;
  }
}

TEST(FrameMap, FixedCases) {
  const Box b{0.1, 0.1, 0.5, 0.5};
  const Box far{0.6, 0.6, 0.9, 0.9};
  EXPECT_EQ(frame_map({{0, 0, b, 0.9}}, {{0, 0, b}}), 1.0);
  EXPECT_EQ(frame_map({{0, 0, far, 0.9}, {0, 0, b, 0.8}}, {{0, 0, b}}), 0.5);
  EXPECT_EQ(frame_map({{0, 0, b, 0.9}}, {{1, 0, b}}), 0.0);
  EXPECT_EQ(frame_map({{0, 0, b, 0.9}}, {}), 0.0);
  EXPECT_EQ(frame_map({{0, 0, b, 0.9}, {0, 0, b, 0.8}}, {{0, 0, b}}), 1.0);
}

TEST(FrameMap, InvariantToInputOrderAndMonotoneRescoring) {
  SplitMix64 rng(10);
  std::vector<FrameDetection> dets;
  std::vector<FrameGroundTruth> gts;
  for (int i = 0; i < 4; ++i) gts.push_back({rng.below(3), rng.below(2), grid_box(rng)});
  for (int i = 0; i < 10; ++i) dets.push_back({rng.below(3), rng.below(2), i % 2 ? gts[i % 4].box : grid_box(rng), rng.uniform()});
  const double base = frame_map(dets, gts);
  auto rev = dets;
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(frame_map(rev, gts), base);
  for (auto& d : rev) d.score = 0.5 * d.score * d.score;
  EXPECT_EQ(frame_map(rev, gts), base);
}
