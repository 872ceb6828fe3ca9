#pragma once

// Differentiable ops over tape variables. Each op computes its value with the
// kernels in kernels.hpp and records a backprop closure.

#include <vector>

#include "vidkern/core/autodiff.hpp"
#include "vidkern/core/kernels.hpp"

namespace vidkern {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
  return *a.tape;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  return tape.record(OpKind::MatMul, {a.id, b.id}, matmul(a.value(), b.value()),
                     [a = a.id, b = b.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(a)) t.accumulate(a, matmul(n.grad, transpose(t.value(b))));
                       if (t.requires_grad(b)) t.accumulate(b, matmul(transpose(t.value(a)), n.grad));
                     });
}

inline Var transpose(Var a) {
  return a.tape->record(OpKind::Transpose, {a.id}, transpose(a.value()),
                        [a = a.id](Tape& t, const TapeNode& n) { t.accumulate(a, transpose(n.grad)); });
}

inline Var add(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  return tape.record(OpKind::Add, {a.id, b.id}, add(a.value(), b.value()),
                     [a = a.id, b = b.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(a)) t.accumulate(a, reduce_to(n.grad, t.value(a).dims()));
                       if (t.requires_grad(b)) t.accumulate(b, reduce_to(n.grad, t.value(b).dims()));
                     });
}

inline Var sub(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  return tape.record(OpKind::Sub, {a.id, b.id}, sub(a.value(), b.value()),
                     [a = a.id, b = b.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(a)) t.accumulate(a, reduce_to(n.grad, t.value(a).dims()));
                       if (t.requires_grad(b)) t.accumulate(b, reduce_to(scale(n.grad, -1.0), t.value(b).dims()));
                     });
}

inline Var mul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  return tape.record(OpKind::Mul, {a.id, b.id}, mul(a.value(), b.value()),
                     [a = a.id, b = b.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(a)) t.accumulate(a, reduce_to(mul(n.grad, t.value(b)), t.value(a).dims()));
                       if (t.requires_grad(b)) t.accumulate(b, reduce_to(mul(n.grad, t.value(a)), t.value(b).dims()));
                     });
}

inline Var scale(Var a, double s) {
  return a.tape->record(OpKind::Scale, {a.id}, scale(a.value(), s),
                        [a = a.id, s](Tape& t, const TapeNode& n) { t.accumulate(a, scale(n.grad, s)); });
}

inline Var add_scalar(Var a, double s) {
  return a.tape->record(OpKind::AddScalar, {a.id}, map_values(a.value(), [s](double v) { return v + s; }),
                        [a = a.id](Tape& t, const TapeNode& n) { t.accumulate(a, n.grad); });
}

inline Var relu(Var a) {
  return a.tape->record(OpKind::Relu, {a.id}, relu(a.value()), [a = a.id](Tape& t, const TapeNode& n) {
    const Tensor& x = t.value(a);
    Tensor g(x.dims());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = x[i] > 0.0 ? n.grad[i] : 0.0;
    t.accumulate(a, g);
  });
}

inline Var sigmoid(Var a) {
  return a.tape->record(OpKind::Sigmoid, {a.id}, sigmoid(a.value()), [a = a.id](Tape& t, const TapeNode& n) {
    Tensor g(n.value.dims());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    t.accumulate(a, g);
  });
}

inline Var tanh(Var a) {
  return a.tape->record(OpKind::Tanh, {a.id}, tanh(a.value()), [a = a.id](Tape& t, const TapeNode& n) {
    Tensor g(n.value.dims());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * (1.0 - n.value[i] * n.value[i]);
    t.accumulate(a, g);
  });
}

inline Var log(Var a) {
  return a.tape->record(OpKind::Log, {a.id}, map_values(a.value(), [](double v) { return std::log(v); }),
                        [a = a.id](Tape& t, const TapeNode& n) {
                          const Tensor& x = t.value(a);
                          Tensor g(x.dims());
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] / x[i];
                          t.accumulate(a, g);
                        });
}

inline Var exp(Var a) {
  return a.tape->record(OpKind::Exp, {a.id}, map_values(a.value(), [](double v) { return std::exp(v); }),
                        [a = a.id](Tape& t, const TapeNode& n) { t.accumulate(a, mul(n.grad, n.value)); });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::vector<const Tensor*> values;
  std::vector<NodeId> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    values.push_back(&p.value());
    ids.push_back(p.id);
  }
  Tape& tape = *parts.front().tape;
  return tape.record(OpKind::Concat, ids, concat(values, axis), [ids, axis](Tape& t, const TapeNode& n) {
    std::size_t offset = 0;
    for (NodeId id : ids) {
      const std::size_t extent = t.value(id).dim(axis);
      if (t.requires_grad(id)) t.accumulate(id, slice(n.grad, axis, offset, offset + extent));
      offset += extent;
    }
  });
}

inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  return a.tape->record(OpKind::Slice, {a.id}, slice(a.value(), axis, begin, end),
                        [a = a.id, axis, begin](Tape& t, const TapeNode& n) {
                          const Tensor& x = t.value(a);
                          const auto s = detail::split_axis(x.dims(), axis);
                          const std::size_t len = n.value.dim(axis);
                          Tensor g(x.dims());
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t e = 0; e < len; ++e)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                g[(o * s.extent + begin + e) * s.inner + i] = n.grad[(o * len + e) * s.inner + i];
                          t.accumulate(a, g);
                        });
}

inline Var reshape(Var a, Shape dims) {
  return a.tape->record(OpKind::Reshape, {a.id}, a.value().reshaped(std::move(dims)),
                        [a = a.id](Tape& t, const TapeNode& n) {
                          t.accumulate(a, n.grad.reshaped(t.value(a).dims()));
                        });
}

inline Var permute(Var a, std::vector<std::size_t> axes) {
  Tensor out = permute(a.value(), axes);
  return a.tape->record(OpKind::Permute, {a.id}, std::move(out),
                        [a = a.id, axes](Tape& t, const TapeNode& n) {
                          std::vector<std::size_t> inverse(axes.size());
                          for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
                          t.accumulate(a, permute(n.grad, inverse));
                        });
}

/// Row `i` of a matrix as a [1, n] tensor (embedding lookup).
inline Var row(Var m, std::size_t i) {
  if (m.value().rank() != 2) throw ShapeError("row: expected a matrix, got " + shape_str(m.dims()));
  if (i >= m.value().dim(0)) {
    throw DataError("row: index " + std::to_string(i) + " out of range for " + shape_str(m.dims()));
  }
  return slice(m, 0, i, i + 1);
}

/// Single element (flat index) as a [1] tensor.
inline Var pick(Var a, std::size_t flat) {
  const Tensor& x = a.value();
  if (flat >= x.size()) throw DataError("pick: index out of range for " + shape_str(x.dims()));
  return a.tape->record(OpKind::Pick, {a.id}, Tensor::scalar(x[flat]), [a = a.id, flat](Tape& t, const TapeNode& n) {
    Tensor g(t.value(a).dims());
    g[flat] = n.grad[0];
    t.accumulate(a, g);
  });
}

inline Var sum_all(Var a) {
  return a.tape->record(OpKind::SumAll, {a.id}, Tensor::scalar(sum(a.value())),
                        [a = a.id](Tape& t, const TapeNode& n) {
                          t.accumulate(a, Tensor(t.value(a).dims(), n.grad[0]));
                        });
}

inline Var mean_axis(Var a, std::size_t axis) {
  return a.tape->record(OpKind::MeanAxis, {a.id}, mean_axis(a.value(), axis),
                        [a = a.id, axis](Tape& t, const TapeNode& n) {
                          const Tensor& x = t.value(a);
                          const auto s = detail::split_axis(x.dims(), axis);
                          const double inv = 1.0 / static_cast<double>(s.extent);
                          Tensor g(x.dims());
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t e = 0; e < s.extent; ++e)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                g[(o * s.extent + e) * s.inner + i] = n.grad[o * s.inner + i] * inv;
                          t.accumulate(a, g);
                        });
}

inline Var max_axis(Var a, std::size_t axis) {
  std::vector<std::size_t> arg;
  Tensor out = max_axis(a.value(), axis, &arg);
  return a.tape->record(OpKind::MaxAxis, {a.id}, std::move(out),
                        [a = a.id, axis, arg = std::move(arg)](Tape& t, const TapeNode& n) {
                          const Tensor& x = t.value(a);
                          const auto s = detail::split_axis(x.dims(), axis);
                          Tensor g(x.dims());
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t r = o * s.inner + i;
                              g[(o * s.extent + arg[r]) * s.inner + i] += n.grad[r];
                            }
                          t.accumulate(a, g);
                        });
}

inline Var softmax(Var a, std::size_t axis) {
  return a.tape->record(OpKind::Softmax, {a.id}, softmax(a.value(), axis),
                        [a = a.id, axis](Tape& t, const TapeNode& n) {
                          t.accumulate(a, softmax_grad(n.value, n.grad, axis));
                        });
}

inline Var log_softmax(Var a, std::size_t axis) {
  return a.tape->record(OpKind::LogSoftmax, {a.id}, log_softmax(a.value(), axis),
                        [a = a.id, axis](Tape& t, const TapeNode& n) {
                          t.accumulate(a, log_softmax_grad(n.value, n.grad, axis));
                        });
}

inline Var conv_spatial(Var x, Var w) {
  Tape& tape = detail::same_tape(x, w);
  return tape.record(OpKind::ConvSpatial, {x.id, w.id}, conv_spatial(x.value(), w.value()),
                     [x = x.id, w = w.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(x)) t.accumulate(x, conv_spatial_grad_input(n.grad, t.value(x), t.value(w)));
                       if (t.requires_grad(w)) t.accumulate(w, conv_spatial_grad_weight(n.grad, t.value(x), t.value(w)));
                     });
}

inline Var conv_temporal(Var x, Var w) {
  Tape& tape = detail::same_tape(x, w);
  return tape.record(OpKind::ConvTemporal, {x.id, w.id}, conv_temporal(x.value(), w.value()),
                     [x = x.id, w = w.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(x)) t.accumulate(x, conv_temporal_grad_input(n.grad, t.value(x), t.value(w)));
                       if (t.requires_grad(w)) t.accumulate(w, conv_temporal_grad_weight(n.grad, t.value(x), t.value(w)));
                     });
}

inline Var depthwise_temporal_conv(Var seq, Var kernels) {
  Tape& tape = detail::same_tape(seq, kernels);
  return tape.record(OpKind::DepthwiseTemporal, {seq.id, kernels.id},
                     depthwise_temporal_conv(seq.value(), kernels.value()),
                     [s = seq.id, k = kernels.id](Tape& t, const TapeNode& n) {
                       if (t.requires_grad(s)) t.accumulate(s, depthwise_grad_input(n.grad, t.value(s), t.value(k)));
                       if (t.requires_grad(k)) t.accumulate(k, depthwise_grad_kernels(n.grad, t.value(s), t.value(k)));
                     });
}

/// 1x1x1 convolution: channel mixing with a [Co, C] matrix.
inline Var pointwise_conv(Var x, Var w) {
  const Shape& wd = w.dims();
  if (wd.size() != 2) throw ShapeError("pointwise_conv: weights must be [Co,C], got " + shape_str(wd));
  return conv_spatial(x, reshape(w, {wd[0], wd[1], 1, 1}));
}

inline Var roi_pool_3d(Var feat, const Box& box, const PoolExtents& out) {
  std::vector<std::size_t> arg;
  Tensor y = roi_pool_3d(feat.value(), box, out, &arg);
  return feat.tape->record(OpKind::RoiPool3d, {feat.id}, std::move(y),
                           [f = feat.id, arg = std::move(arg)](Tape& t, const TapeNode& n) {
                             Tensor g(t.value(f).dims());
                             for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += n.grad[o];
                             t.accumulate(f, g);
                           });
}

}  // namespace vidkern
