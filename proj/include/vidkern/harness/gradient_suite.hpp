#pragma once

// Finite-difference checks for every differentiable op and for the composed
// training losses. Each op is reduced to a scalar by a fixed random weighting
// of its output so that all output coordinates contribute.

#include <memory>
#include <string>
#include <vector>

#include "vidkern/backbone.hpp"
#include "vidkern/captioning.hpp"
#include "vidkern/core/gradcheck.hpp"
#include "vidkern/lstr.hpp"
#include "vidkern/quantization.hpp"

namespace vidkern {

namespace detail {

// sum(y * R) with R drawn from a generator keyed by `tag`, identical on every call.
inline Var probe(Var y, std::uint64_t tag) {
  SplitMix64 r(tag);
  return sum_all(mul(y, y.tape->constant(Tensor::uniform(y.dims(), r))));
}

}  // namespace detail

inline std::vector<GradCheckReport> run_gradient_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  using detail::probe;
  SplitMix64 rng(seed);
  std::vector<GradCheckReport> out;
  std::uint64_t tag = seed;

  auto op = [&](const std::string& name, std::vector<Tensor> inputs, const LossFn& fn) {
    out.push_back(check_gradients(name, fn, inputs, rng, opt));
  };
  auto U = [&](Shape d, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(std::move(d), rng, lo, hi); };
  const std::uint64_t t0 = ++tag;

  op("matmul", {U({3, 4}), U({4, 2})}, [=](Tape&, const std::vector<Var>& v) { return probe(matmul(v[0], v[1]), t0); });
  op("transpose", {U({3, 4})}, [=](Tape&, const std::vector<Var>& v) { return probe(transpose(v[0]), t0); });
  op("add_broadcast", {U({3, 4}), U({1, 4})},
     [=](Tape&, const std::vector<Var>& v) { return probe(add(v[0], v[1]), t0); });
  op("sub_broadcast", {U({3, 4}), U({3, 1})},
     [=](Tape&, const std::vector<Var>& v) { return probe(sub(v[0], v[1]), t0); });
  op("mul", {U({2, 3}), U({2, 3})}, [=](Tape&, const std::vector<Var>& v) { return probe(mul(v[0], v[1]), t0); });
  op("scale", {U({2, 3})}, [=](Tape&, const std::vector<Var>& v) { return probe(scale(v[0], -1.7), t0); });
  op("add_scalar", {U({2, 3})}, [=](Tape&, const std::vector<Var>& v) { return probe(add_scalar(v[0], 0.3), t0); });
  op("relu", {U({3, 4})}, [=](Tape&, const std::vector<Var>& v) { return probe(relu(v[0]), t0); });
  op("sigmoid", {U({3, 4}, -3, 3)}, [=](Tape&, const std::vector<Var>& v) { return probe(sigmoid(v[0]), t0); });
  op("tanh", {U({3, 4}, -2, 2)}, [=](Tape&, const std::vector<Var>& v) { return probe(tanh(v[0]), t0); });
  op("log", {U({3, 4}, 0.5, 2.0)}, [=](Tape&, const std::vector<Var>& v) { return probe(log(v[0]), t0); });
  op("exp", {U({3, 4})}, [=](Tape&, const std::vector<Var>& v) { return probe(exp(v[0]), t0); });
  op("concat", {U({2, 3}), U({2, 2})},
     [=](Tape&, const std::vector<Var>& v) { return probe(concat({v[0], v[1]}, 1), t0); });
  op("slice", {U({4, 5})}, [=](Tape&, const std::vector<Var>& v) { return probe(slice(v[0], 1, 1, 4), t0); });
  op("reshape", {U({2, 6})}, [=](Tape&, const std::vector<Var>& v) { return probe(reshape(v[0], {3, 4}), t0); });
  op("permute", {U({2, 3, 4})},
     [=](Tape&, const std::vector<Var>& v) { return probe(permute(v[0], {2, 0, 1}), t0); });
  op("row", {U({4, 3})}, [=](Tape&, const std::vector<Var>& v) { return probe(row(v[0], 2), t0); });
  op("pick", {U({3, 4})}, [=](Tape&, const std::vector<Var>& v) { return scale(pick(v[0], 7), 2.0); });
  op("sum_all", {U({3, 4})}, [=](Tape&, const std::vector<Var>& v) { return sum_all(mul(v[0], v[0])); });
  op("mean_axis", {U({2, 3, 4})}, [=](Tape&, const std::vector<Var>& v) { return probe(mean_axis(v[0], 1), t0); });
  op("max_axis", {U({3, 5})}, [=](Tape&, const std::vector<Var>& v) { return probe(max_axis(v[0], 1), t0); });
  op("softmax", {U({3, 4}, -2, 2)}, [=](Tape&, const std::vector<Var>& v) { return probe(softmax(v[0], 1), t0); });
  op("log_softmax", {U({3, 4}, -2, 2)},
     [=](Tape&, const std::vector<Var>& v) { return probe(log_softmax(v[0], 0), t0); });
  op("conv_spatial", {U({1, 2, 3, 4, 4}), U({2, 2, 3, 3})},
     [=](Tape&, const std::vector<Var>& v) { return probe(conv_spatial(v[0], v[1]), t0); });
  op("conv_temporal", {U({1, 2, 4, 3, 3}), U({3, 2, 3})},
     [=](Tape&, const std::vector<Var>& v) { return probe(conv_temporal(v[0], v[1]), t0); });
  op("depthwise_temporal_conv", {U({5, 3}), U({3, 3})},
     [=](Tape&, const std::vector<Var>& v) { return probe(depthwise_temporal_conv(v[0], v[1]), t0); });
  op("pointwise_conv", {U({1, 3, 2, 3, 3}), U({2, 3})},
     [=](Tape&, const std::vector<Var>& v) { return probe(pointwise_conv(v[0], v[1]), t0); });
  op("roi_pool_3d", {U({2, 4, 5, 5})}, [=](Tape&, const std::vector<Var>& v) {
    return probe(roi_pool_3d(v[0], Box{0.1, 0.2, 0.9, 0.8}, PoolExtents{2, 2, 2}), t0);
  });
  op("adaptive_attention", {U({4}), U({3, 2, 3, 3}), U({4, 3})},
     [=](Tape&, const std::vector<Var>& v) { return probe(adaptive_attention(v[0], v[1], v[2]), t0); });
  op("attention_pool_3d", {U({3, 2, 3, 3}), U({2, 3, 3}, 0.0, 1.0)},
     [=](Tape&, const std::vector<Var>& v) { return probe(attention_pool_3d(v[0], v[1]), t0); });
  op("gcn_layer", {U({3, 4}), U({3, 3}, 0.0, 1.0), U({4, 4})},
     [=](Tape&, const std::vector<Var>& v) { return probe(gcn_layer(v[0], v[1], v[2]), t0); });
  {
    SplitMix64 tr(seed ^ 0x5eed);
    Tensor targets({3, 4});
    for (double& x : targets.data()) x = tr.below(2) ? 1.0 : 0.0;
    op("multilabel_bce", {U({3, 4}, -2, 2)},
       [=](Tape&, const std::vector<Var>& v) { return multilabel_bce(sigmoid(v[0]), targets); });
  }

  // Composed losses over parameter structs.
  auto composed = [&](const std::string& name, const ParamLossFn& fn, const ParamRefs& params) {
    out.push_back(check_param_gradients(name, fn, params, rng, opt));
  };

  {
    BackboneConfig cfg;
    cfg.in_channels = 2;
    cfg.frames = 4;
    cfg.height = 4;
    cfg.width = 4;
    cfg.stages = {{4, 1, BlockKind::P3DA, P3DVariant::A}, {4, 1, BlockKind::P3DC, P3DVariant::A}};
    auto params = std::make_shared<BackboneParams>(BackboneParams::init(cfg, rng));
    const Tensor clip = U({1, 2, 4, 4, 4});
    composed("backbone_2block", [=](Tape& t) { return probe(backbone_forward(t.constant(clip), cfg, *params), t0); },
             params->refs());

    auto pb = std::make_shared<P3DBlockParams>(P3DBlockParams::init(P3DVariant::B, 4, 2, rng));
    const Tensor x = U({1, 4, 3, 3, 3});
    ParamRefs pr;
    pb->collect(pr);
    composed("p3d_block_B", [=](Tape& t) { return probe(p3d_block(t.constant(x), *pb), t0); }, pr);

    auto lg = std::make_shared<LGDBlockParams>(LGDBlockParams::init(P3DVariant::C, 4, 2, rng));
    const Tensor g = U({1, 4});
    ParamRefs lr;
    lg->collect(lr);
    composed("lgd_block", [=](Tape& t) {
      const auto o = lgd_block(t.constant(x), t.constant(g), *lg);
      return add(probe(o.local, t0), probe(o.global, t0 + 1));
    }, lr);
  }
  {
    auto tcp_params = std::make_shared<TCPParams>(TCPParams::init(4, rng, 0.3));
    const Tensor feats = U({6, 4});
    ParamRefs pr;
    tcp_params->collect(pr);
    composed("tcp", [=](Tape& t) { return probe(tcp(t.constant(feats), *tcp_params), t0); }, pr);
  }
  {
    CaptionModelConfig cc{8, 4, 5, 4, 3, 2, 3};
    auto p = std::make_shared<CaptionModelParams>(CaptionModelParams::init(cc, rng));
    const Tensor frames = U({5, 4});
    const AttributeVector attr{U({3}, 0.0, 1.0)};
    const std::vector<TokenId> ref{3, 5, 4, 7, kEos};
    composed("caption_xent", [=](Tape& t) { return xent_loss(t, *p, frames, attr, ref); }, p->refs());

    const DecodeResult path = decode(*p, frames, attr, DecodeMode::Sample, 6, seed);
    composed("scst_surrogate", [=](Tape& t) { return scst_surrogate(t, *p, frames, attr, path, 0.7); }, p->refs());
  }
  {
    // lambda = 0 keeps the relation graph independent of the parameters.
    LSTRConfig lc;
    lc.channels = 3;
    lc.pool = {1, 2, 2};
    lc.actor_dim = 4;
    lc.classes = 2;
    lc.lambda = 0.0;
    auto p = std::make_shared<LSTRParams>(LSTRParams::init(lc, rng));
    std::vector<ClipFeatureMap> clips{{0, U({3, 2, 4, 4}, 0.0, 1.0)}, {1, U({3, 2, 4, 4}, 0.0, 1.0)}};
    std::vector<BoxProposal> props{{0, {0.1, 0.1, 0.7, 0.6}, 0.9, {}},
                                   {0, {0.3, 0.2, 0.9, 0.9}, 0.8, {}},
                                   {1, {0.0, 0.4, 0.5, 1.0}, 0.7, {}}};
    Tensor targets({3, 2});
    targets.at({0, 0}) = targets.at({1, 1}) = targets.at({2, 0}) = 1.0;
    composed("lstr_forward_bce", [=](Tape& t) {
      auto local = props;
      return multilabel_bce(lstr_forward(t, clips, local, lc, *p).scores, targets);
    }, p->refs());
  }
  return out;
}

}  // namespace vidkern
