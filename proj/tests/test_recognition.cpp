#include <gtest/gtest.h>

#include <cstring>

#include "oracles.hpp"
#include "vidkern/recognition.hpp"

using namespace vidkern;

namespace {

// Softmax rows with the true class boosted by `signal`.
StreamPrediction planted_stream(const std::string& name, const std::vector<std::size_t>& labels, std::size_t C,
                                double signal, SplitMix64& rng) {
  Tensor logits({labels.size(), C});
  for (std::size_t v = 0; v < labels.size(); ++v)
    for (std::size_t c = 0; c < C; ++c) logits.at({v, c}) = rng.normal() + (c == labels[v] ? signal : 0.0);
  return {name, softmax(logits, 1)};
}

std::uint64_t fnv1a(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : t.data()) {
    unsigned char b[8];
    std::memcpy(b, &v, 8);
    for (unsigned char c : b) h = (h ^ c) * 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST(TopK, TiesRankLowerIndexFirst) {
  const Tensor s = Tensor::matrix({{0.5, 0.5, 0.0}, {0.2, 0.3, 0.5}});
  EXPECT_EQ(topk_accuracy(s, {0, 2}, 1), 1.0);
  EXPECT_EQ(topk_accuracy(s, {1, 1}, 1), 0.0);
  EXPECT_EQ(topk_accuracy(s, {1, 1}, 2), 1.0);
}

TEST(TopK, Errors) {
  const Tensor s({2, 3}, 1.0 / 3);
  EXPECT_THROW(topk_accuracy(s, {0, 3}, 1), DataError);
  EXPECT_THROW(topk_accuracy(s, {0, 1}, 0), ContractError);
  EXPECT_THROW(topk_accuracy(s, {0, 1}, 4), ContractError);
  EXPECT_THROW(topk_accuracy(s, {0}, 1), ShapeError);
}

TEST(Fuse, OneHotSelectsStream) {
  SplitMix64 rng(1);
  const std::vector<std::size_t> y{0, 1, 2};
  const std::vector<StreamPrediction> s{planted_stream("a", y, 3, 1, rng), planted_stream("b", y, 3, 1, rng)};
  EXPECT_EQ(fuse(s, {{0.0, 1.0}}), s[1].scores);
  EXPECT_THROW(fuse(s, {{1.0}}), ShapeError);
  EXPECT_THROW((FusionWeights{{0.7, 0.7}}.validate()), ContractError);
}

TEST(TuneFusion, MatchesExhaustiveGrid) {
  SplitMix64 rng(31);
  for (std::size_t S : {2u, 3u}) {
    for (int rep = 0; rep < 3; ++rep) {
      const std::size_t C = 6, V = 40;
      std::vector<std::size_t> y(V);
      for (auto& l : y) l = rng.below(C);
      std::vector<StreamPrediction> streams;
      std::vector<Tensor> raw;
      for (std::size_t s = 0; s < S; ++s) {
        streams.push_back(planted_stream("s" + std::to_string(s), y, C, 0.6 + 0.4 * static_cast<double>(s), rng));
        raw.push_back(streams.back().scores);
      }
      const FusionWeights w = tune_fusion_weights(streams, y);
      EXPECT_EQ(w.w, oracle::grid_fusion(raw, y));
      const double fused = topk_accuracy(fuse(streams, w), y, 1);
      for (const auto& s : streams) EXPECT_GE(fused, topk_accuracy(s.scores, y, 1));
    }
  }
}

TEST(TuneFusion, ManyStreamsHeuristicStaysOnSimplex) {
  SplitMix64 rng(32);
  const std::size_t C = 4, V = 30;
  std::vector<std::size_t> y(V);
  for (auto& l : y) l = rng.below(C);
  std::vector<StreamPrediction> streams;
  for (int s = 0; s < 6; ++s) streams.push_back(planted_stream("s", y, C, 0.3 * s, rng));
  const FusionWeights w = tune_fusion_weights(streams, y);
  ASSERT_EQ(w.w.size(), 6u);
  EXPECT_NO_THROW(w.validate());
  for (double v : w.w) EXPECT_NEAR(v * 20, std::round(v * 20), 1e-9);
  const double fused = topk_accuracy(fuse(streams, w), y, 1);
  for (const auto& s : streams) EXPECT_GE(fused, topk_accuracy(s.scores, y, 1));
}

TEST(TuneFusion, ResolutionMustDivideOne) {
  SplitMix64 rng(33);
  const std::vector<std::size_t> y{0, 1};
  const std::vector<StreamPrediction> s{planted_stream("a", y, 2, 1, rng)};
  EXPECT_THROW(tune_fusion_weights(s, y, 0.3), ConfigError);
  EXPECT_EQ(tune_fusion_weights(s, y).w, std::vector<double>{1.0});
}

TEST(TrainStream, LearnsPlantedFeatures) {
  SplitMix64 rng(34);
  const std::size_t C = 3, D = 6;
  const Tensor means = Tensor::normal({C, D}, rng, 2.0);
  std::vector<FeatureSequence> seqs;
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 30; ++i) {
    const std::size_t c = i % C;
    Tensor x = Tensor::normal({3, D}, rng, 0.5);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t d = 0; d < D; ++d) x.at({t, d}) += means.at({c, d});
    seqs.emplace_back(x);
    y.push_back(c);
  }
  for (auto q : {Quantizer::AP, Quantizer::TCP}) {
    StreamModel m = StreamModel::init("s", q, false, D, C, rng);
    train_stream(m, seqs, y, {100, 0.05});
    const auto pred = predict_stream(seqs, m);
    EXPECT_NO_THROW(pred.validate());
    EXPECT_GE(topk_accuracy(pred.scores, y, 1), 0.9);
  }
}

TEST(Pipeline, GoldenScoreHash) {
  SplitMix64 rng(35);
  BackboneConfig cfg = BackboneConfig::toy();
  cfg.frames = 4;
  cfg.height = 4;
  cfg.width = 4;
  const BackboneParams bp = BackboneParams::init(cfg, rng);
  const SharedBackbone bb{&cfg, &bp};
  std::vector<StreamModel> models{StreamModel::init("frame", Quantizer::TCP, true, 16, 4, rng),
                                  StreamModel::init("audio", Quantizer::AP, false, 5, 4, rng)};
  std::vector<std::vector<Tensor>> inputs(2);
  for (int v = 0; v < 3; ++v) {
    inputs[0].push_back(Tensor::uniform({2, 3, 4, 4, 4}, rng));
    inputs[1].push_back(Tensor::uniform({3, 5}, rng));
  }
  const auto r = recognize_pipeline(inputs, models, bb, {{0.25, 0.75}});
  EXPECT_EQ(r.fused.dims(), (Shape{3, 4}));
  for (const auto& s : r.streams) EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(fnv1a(r.fused), 2505873966675984286ull);
}
