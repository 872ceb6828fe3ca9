#pragma once

// Pseudo-3D bottleneck blocks (serial, parallel and serial-with-skip
// factorizations of a 3x3x3 convolution into 1x3x3 spatial and 3x1x1 temporal
// parts) and Local-Global Diffusion blocks, composed into a small configurable
// backbone that maps clips [N,C_in,T,H,W] to per-timestep features [N,T,D].

#include <string>
#include <vector>

#include "vidkern/core/ops.hpp"
#include "vidkern/core/optim.hpp"

namespace vidkern {

enum class P3DVariant { A, B, C };

enum class BlockKind { P3DA, P3DB, P3DC, LGD };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::P3DA: return "P3D-A";
    case BlockKind::P3DB: return "P3D-B";
    case BlockKind::P3DC: return "P3D-C";
    case BlockKind::LGD: return "LGD";
  }
  return "?";
}

inline BlockKind block_kind_from_string(const std::string& s) {
  if (s == "P3D-A") return BlockKind::P3DA;
  if (s == "P3D-B") return BlockKind::P3DB;
  if (s == "P3D-C") return BlockKind::P3DC;
  if (s == "LGD") return BlockKind::LGD;
  throw ConfigError("unknown block kind '" + s + "' (expected P3D-A, P3D-B, P3D-C or LGD)");
}

struct P3DBlockParams {
  P3DVariant variant = P3DVariant::A;
  Tensor reduce;    // [C', C]
  Tensor spatial;   // [C', C', 3, 3]
  Tensor temporal;  // [C', C', 3]
  Tensor expand;    // [C, C']

  std::size_t channels() const { return reduce.dim(1); }
  std::size_t bottleneck() const { return reduce.dim(0); }

  void validate() const {
    const std::size_t c = channels(), b = bottleneck();
    if (spatial.dims() != Shape{b, b, 3, 3} || temporal.dims() != Shape{b, b, 3} || expand.dims() != Shape{c, b}) {
      throw ShapeError("P3D block params inconsistent: reduce " + shape_str(reduce.dims()) + ", spatial " +
                       shape_str(spatial.dims()) + ", temporal " + shape_str(temporal.dims()) + ", expand " +
                       shape_str(expand.dims()));
    }
  }

  void collect(ParamRefs& out) { out.insert(out.end(), {&reduce, &spatial, &temporal, &expand}); }

  static P3DBlockParams init(P3DVariant variant, std::size_t channels, std::size_t bottleneck, SplitMix64& rng) {
    P3DBlockParams p;
    p.variant = variant;
    p.reduce = init_uniform({bottleneck, channels}, channels, rng);
    p.spatial = init_uniform({bottleneck, bottleneck, 3, 3}, bottleneck * 9, rng);
    p.temporal = init_uniform({bottleneck, bottleneck, 3}, bottleneck * 3, rng);
    p.expand = init_uniform({channels, bottleneck}, bottleneck, rng);
    return p;
  }
};

struct LGDBlockParams {
  P3DBlockParams p3d;  // local path
  Tensor g2l;          // [C, C] global -> local injection
  Tensor l2g;          // [C, 2C] combiner over [global, pooled local]

  void validate() const {
    p3d.validate();
    const std::size_t c = p3d.channels();
    if (g2l.dims() != Shape{c, c} || l2g.dims() != Shape{c, 2 * c}) {
      throw ShapeError("LGD block params inconsistent with width " + std::to_string(c) + ": g2l " +
                       shape_str(g2l.dims()) + ", l2g " + shape_str(l2g.dims()));
    }
  }

  void collect(ParamRefs& out) {
    p3d.collect(out);
    out.insert(out.end(), {&g2l, &l2g});
  }

  static LGDBlockParams init(P3DVariant variant, std::size_t channels, std::size_t bottleneck, SplitMix64& rng) {
    LGDBlockParams p;
    p.p3d = P3DBlockParams::init(variant, channels, bottleneck, rng);
    p.g2l = init_uniform({channels, channels}, channels, rng);
    p.l2g = init_uniform({channels, 2 * channels}, 2 * channels, rng);
    return p;
  }
};

struct StageConfig {
  std::size_t width = 8;
  std::size_t blocks = 1;
  BlockKind kind = BlockKind::P3DA;
  // Local path variant used inside LGD blocks.
  P3DVariant lgd_variant = P3DVariant::A;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t frames = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t bottleneck_divisor = 2;
  std::vector<StageConfig> stages;

  /// Two stages of widths 8 and 16 over 3x16x16x16 clips.
  static BackboneConfig toy() {
    BackboneConfig cfg;
    cfg.stages = {{8, 1, BlockKind::P3DA, P3DVariant::A}, {16, 1, BlockKind::P3DC, P3DVariant::A}};
    return cfg;
  }

  std::size_t feature_width() const { return stages.back().width; }

  void validate() const {
    if (stages.empty()) throw ConfigError("backbone needs at least one stage");
    if (in_channels == 0 || frames == 0 || height == 0 || width == 0) {
      throw ConfigError("backbone input dims must be positive");
    }
    if (bottleneck_divisor == 0) throw ConfigError("bottleneck_divisor must be positive");
    for (const auto& s : stages) {
      if (s.width == 0 || s.blocks == 0) throw ConfigError("stage widths and block counts must be positive");
    }
  }
};

struct StageParams {
  Tensor entry;  // [width, previous width], 1x1x1 projection followed by relu
  std::vector<P3DBlockParams> p3d;
  std::vector<LGDBlockParams> lgd;
};

struct BackboneParams {
  std::vector<StageParams> stages;

  ParamRefs refs() {
    ParamRefs out;
    for (auto& s : stages) {
      out.push_back(&s.entry);
      for (auto& b : s.p3d) b.collect(out);
      for (auto& b : s.lgd) b.collect(out);
    }
    return out;
  }

  static BackboneParams init(const BackboneConfig& cfg, SplitMix64& rng) {
    cfg.validate();
    BackboneParams p;
    std::size_t prev = cfg.in_channels;
    for (const auto& s : cfg.stages) {
      StageParams sp;
      sp.entry = init_uniform({s.width, prev}, prev, rng);
      const std::size_t b = std::max<std::size_t>(1, s.width / cfg.bottleneck_divisor);
      for (std::size_t i = 0; i < s.blocks; ++i) {
        switch (s.kind) {
          case BlockKind::P3DA: sp.p3d.push_back(P3DBlockParams::init(P3DVariant::A, s.width, b, rng)); break;
          case BlockKind::P3DB: sp.p3d.push_back(P3DBlockParams::init(P3DVariant::B, s.width, b, rng)); break;
          case BlockKind::P3DC: sp.p3d.push_back(P3DBlockParams::init(P3DVariant::C, s.width, b, rng)); break;
          case BlockKind::LGD: sp.lgd.push_back(LGDBlockParams::init(s.lgd_variant, s.width, b, rng)); break;
        }
      }
      p.stages.push_back(std::move(sp));
      prev = s.width;
    }
    return p;
  }
};

// ---------------------------------------------------------------------------

namespace detail {

inline void require_channels(const Shape& x, std::size_t c, const char* op) {
  if (x.size() != 5 || x[1] != c) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x) + " does not have " + std::to_string(c) +
                     " channels");
  }
}

// Mean over T,H,W of [N,C,T,H,W] -> [N,C].
inline Var global_avg_pool(Var x) {
  const Shape& d = x.dims();
  return mean_axis(reshape(x, {d[0], d[1], d[2] * d[3] * d[4]}), 2);
}

}  // namespace detail

/// h = relu(reduce(x)); y' per variant; out = relu(x + expand(relu(y'))).
inline Var p3d_block(Var x, const P3DBlockParams& p) {
  p.validate();
  detail::require_channels(x.dims(), p.channels(), "p3d_block");
  Tape& tape = *x.tape;
  Var h = relu(pointwise_conv(x, tape.param(p.reduce)));
  Var ws = tape.param(p.spatial);
  Var wt = tape.param(p.temporal);
  Var y;
  switch (p.variant) {
    case P3DVariant::A:
      y = conv_temporal(conv_spatial(h, ws), wt);
      break;
    case P3DVariant::B:
      y = add(conv_spatial(h, ws), conv_temporal(h, wt));
      break;
    case P3DVariant::C: {
      Var s = conv_spatial(h, ws);
      y = add(s, conv_temporal(s, wt));
      break;
    }
  }
  return relu(add(x, pointwise_conv(relu(y), tape.param(p.expand))));
}

inline Tensor p3d_block(const Tensor& x, const P3DBlockParams& p) {
  Tape tape;
  return p3d_block(tape.constant(x), p).value();
}

struct LGDOutput {
  Var local;
  Var global;
};

/// local' = p3d(local + g2l * global broadcast over T,H,W);
/// global' = l2g * [global; mean_{T,H,W}(local')].
inline LGDOutput lgd_block(Var local, Var global, const LGDBlockParams& p) {
  p.validate();
  const std::size_t c = p.p3d.channels();
  detail::require_channels(local.dims(), c, "lgd_block");
  const Shape& ld = local.dims();
  if (global.dims() != Shape{ld[0], c}) {
    throw ShapeError("lgd_block: global " + shape_str(global.dims()) + " does not match local " + shape_str(ld));
  }
  Tape& tape = *local.tape;
  Var inject = matmul(global, transpose(tape.param(p.g2l)));  // [N,C]
  Var local_in = add(local, reshape(inject, {ld[0], c, 1, 1, 1}));
  Var local_out = p3d_block(local_in, p.p3d);
  Var joined = concat({global, detail::global_avg_pool(local_out)}, 1);  // [N,2C]
  Var global_out = matmul(joined, transpose(tape.param(p.l2g)));
  return {local_out, global_out};
}

inline std::pair<Tensor, Tensor> lgd_block(const Tensor& local, const Tensor& global, const LGDBlockParams& p) {
  Tape tape;
  const auto out = lgd_block(tape.constant(local), tape.constant(global), p);
  return {out.local.value(), out.global.value()};
}

/// Clip [N,C_in,T,H,W] -> features [N,T,D]: stages in order, then a spatial
/// global average pool at each time step.
inline Var backbone_forward(Var clip, const BackboneConfig& cfg, const BackboneParams& params) {
  cfg.validate();
  const Shape expect{clip.dims().empty() ? 0 : clip.dims()[0], cfg.in_channels, cfg.frames, cfg.height, cfg.width};
  if (clip.dims() != expect) {
    throw ShapeError("backbone_forward: clip " + shape_str(clip.dims()) + " does not match config " +
                     shape_str(expect));
  }
  if (params.stages.size() != cfg.stages.size()) throw ShapeError("backbone params/config stage count mismatch");
  Tape& tape = *clip.tape;
  Var x = clip;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageParams& sp = params.stages[s];
    x = relu(pointwise_conv(x, tape.param(sp.entry)));
    if (cfg.stages[s].kind == BlockKind::LGD) {
      Var g = detail::global_avg_pool(x);
      for (const auto& b : sp.lgd) {
        auto out = lgd_block(x, g, b);
        x = out.local;
        g = out.global;
      }
    } else {
      for (const auto& b : sp.p3d) x = p3d_block(x, b);
    }
  }
  const Shape& d = x.dims();
  Var pooled = mean_axis(reshape(x, {d[0], d[1], d[2], d[3] * d[4]}), 3);  // [N,D,T]
  return permute(pooled, {0, 2, 1});
}

inline Tensor backbone_forward(const Tensor& clip, const BackboneConfig& cfg, const BackboneParams& params) {
  Tape tape;
  return backbone_forward(tape.constant(clip), cfg, params).value();
}

}  // namespace vidkern
