#pragma once

// Video-level quantizers over a clip feature sequence [T, D]:
// average pooling and temporal convolutional pooling (TCP).

#include <array>

#include "vidkern/core/ops.hpp"
#include "vidkern/core/optim.hpp"

namespace vidkern {

enum class Quantizer { AP, TCP };

inline std::string to_string(Quantizer q) { return q == Quantizer::AP ? "AP" : "TCP"; }

inline Quantizer quantizer_from_string(const std::string& s) {
  if (s == "AP") return Quantizer::AP;
  if (s == "TCP") return Quantizer::TCP;
  throw ConfigError("unknown quantizer '" + s + "' (expected AP or TCP)");
}

/// Clip-level features f_1..f_N stacked as rows.
class FeatureSequence {
 public:
  explicit FeatureSequence(Tensor feats) : feats_(std::move(feats)) {
    if (feats_.rank() != 2) throw ShapeError("feature sequence must be [T,D], got " + shape_str(feats_.dims()));
  }
  const Tensor& feats() const noexcept { return feats_; }
  std::size_t length() const { return feats_.dim(0); }
  std::size_t width() const { return feats_.dim(1); }

 private:
  Tensor feats_;
};

inline constexpr std::size_t kTcpBlocks = 5;

struct TCPBlock {
  Tensor depthwise;  // [D, 3]
  Tensor pointwise;  // [D, D], applied as x * pointwise
};

struct TCPParams {
  std::array<TCPBlock, kTcpBlocks> blocks;

  std::size_t width() const { return blocks[0].depthwise.dim(0); }

  void validate() const {
    const std::size_t d = width();
    for (const auto& b : blocks) {
      if (b.depthwise.dims() != Shape{d, 3} || b.pointwise.dims() != Shape{d, d}) {
        throw ShapeError("TCP block dims inconsistent: depthwise " + shape_str(b.depthwise.dims()) +
                         ", pointwise " + shape_str(b.pointwise.dims()));
      }
    }
  }

  void collect(ParamRefs& out) {
    for (auto& b : blocks) out.insert(out.end(), {&b.depthwise, &b.pointwise});
  }

  /// Center-impulse depthwise kernels and zero pointwise mixes: every block is
  /// the identity, so TCP reduces to average pooling.
  static TCPParams identity(std::size_t width) {
    TCPParams p;
    for (auto& b : p.blocks) {
      b.depthwise = Tensor({width, 3});
      for (std::size_t d = 0; d < width; ++d) b.depthwise.at({d, 1}) = 1.0;
      b.pointwise = Tensor({width, width});
    }
    return p;
  }

  /// Identity plus uniform noise of the given amplitude.
  static TCPParams init(std::size_t width, SplitMix64& rng, double noise = 0.1) {
    TCPParams p = identity(width);
    for (auto& b : p.blocks) {
      for (double& v : b.depthwise.data()) v += rng.uniform(-noise, noise);
      for (double& v : b.pointwise.data()) v += rng.uniform(-noise, noise);
    }
    return p;
  }
};

inline Var average_pool(Var feats) {
  if (feats.dims().size() != 2) throw ShapeError("average_pool: expected [T,D], got " + shape_str(feats.dims()));
  return mean_axis(feats, 0);
}

inline Tensor average_pool(const FeatureSequence& seq) {
  if (seq.length() == 0) throw ContractError("average_pool: empty sequence");
  return mean_axis(seq.feats(), 0);
}

/// Five residual blocks x <- x + relu(depthwise_k3(x)) * P, then a temporal mean.
inline Var tcp(Var feats, const TCPParams& p) {
  p.validate();
  if (feats.dims().size() != 2 || feats.dims()[1] != p.width()) {
    throw ShapeError("tcp: sequence " + shape_str(feats.dims()) + " does not match width " +
                     std::to_string(p.width()));
  }
  Tape& tape = *feats.tape;
  Var x = feats;
  for (const auto& b : p.blocks) {
    Var h = relu(depthwise_temporal_conv(x, tape.param(b.depthwise)));
    x = add(x, matmul(h, tape.param(b.pointwise)));
  }
  return mean_axis(x, 0);
}

inline Tensor tcp(const FeatureSequence& seq, const TCPParams& p) {
  Tape tape;
  return tcp(tape.constant(seq.feats()), p).value();
}

inline Var quantize(Var feats, Quantizer q, const TCPParams* tcp_params) {
  if (q == Quantizer::AP) return average_pool(feats);
  if (!tcp_params) throw ConfigError("TCP quantizer selected without parameters");
  return tcp(feats, *tcp_params);
}

}  // namespace vidkern
