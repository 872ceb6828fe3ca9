#pragma once

// Forward and backward kernels over plain Tensors. The autodiff layer in
// ops.hpp records these on a tape; nothing here knows about gradients beyond
// the explicit *_grad_* helpers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vidkern/core/tensor.hpp"

namespace vidkern {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(t.dims()));
  }
}

inline void require_odd(std::size_t k, const char* op, const char* name) {
  if (k % 2 == 0) {
    throw ConfigError(std::string(op) + ": kernel extent " + name + " = " + std::to_string(k) +
                      " must be odd for same padding");
  }
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& dims, std::size_t axis) {
  if (axis >= dims.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(dims));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
  s.extent = dims[axis];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
  return s;
}

inline Shape drop_axis(const Shape& dims, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < dims.size(); ++i)
    if (i != axis) out.push_back(dims[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul", "a");
  detail::require_rank(b, 2, "matmul", "b");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, a is " + shape_str(a.dims()) + " (k = " +
                     std::to_string(k) + "), b is " + shape_str(b.dims()) + " (k = " +
                     std::to_string(b.dim(0)) + ")");
  }
  Tensor c({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose", "a");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

// ---------------------------------------------------------------------------
// Factorized video convolutions, "same" zero padding, stride 1.

namespace detail {

// Visits every (output, input, weight) flat-index triple of a spatial
// cross-correlation. x: [N,C,T,H,W], w: [Co,C,kh,kw].
template <class F>
void spatial_taps(const Shape& xd, const Shape& wd, F&& f) {
  const std::size_t N = xd[0], C = xd[1], T = xd[2], H = xd[3], W = xd[4];
  const std::size_t Co = wd[0], kh = wd[2], kw = wd[3];
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t wi = ((co * C + c) * kh + i) * kw + j;
            const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - ph;
            const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pw;
            const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dj));
            const std::size_t w_hi = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - dj));
            for (std::size_t t = 0; t < T; ++t)
              for (std::size_t h = 0; h < H; ++h) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(h) + di;
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
                const std::size_t ybase = (((n * Co + co) * T + t) * H + h) * W;
                const std::size_t xbase = (((n * C + c) * T + t) * H + static_cast<std::size_t>(yy)) * W;
                for (std::size_t w = w_lo; w < w_hi; ++w)
                  f(ybase + w, xbase + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(w) + dj), wi);
              }
          }
}

// x: [N,C,T,H,W], w: [Co,C,kt].
template <class F>
void temporal_taps(const Shape& xd, const Shape& wd, F&& f) {
  const std::size_t N = xd[0], C = xd[1], T = xd[2], HW = xd[3] * xd[4];
  const std::size_t Co = wd[0], kt = wd[2];
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(kt / 2);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < kt; ++k) {
          const std::size_t wi = (co * C + c) * kt + k;
          const std::ptrdiff_t dk = static_cast<std::ptrdiff_t>(k) - pt;
          for (std::size_t t = 0; t < T; ++t) {
            const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t) + dk;
            if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
            const std::size_t ybase = ((n * Co + co) * T + t) * HW;
            const std::size_t xbase = ((n * C + c) * T + static_cast<std::size_t>(tt)) * HW;
            for (std::size_t s = 0; s < HW; ++s) f(ybase + s, xbase + s, wi);
          }
        }
}

// seq: [T,D], kernels: [D,kt].
template <class F>
void depthwise_taps(const Shape& sd, const Shape& kd, F&& f) {
  const std::size_t T = sd[0], D = sd[1], kt = kd[1];
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(kt / 2);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < kt; ++k) {
      const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - p;
      if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t d = 0; d < D; ++d)
        f(t * D + d, static_cast<std::size_t>(tt) * D + d, d * kt + k);
    }
}

inline void check_conv_spatial(const Tensor& x, const Tensor& w) {
  require_rank(x, 5, "conv_spatial", "x");
  require_rank(w, 4, "conv_spatial", "w");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv_spatial: input channels " + std::to_string(x.dim(1)) +
                     " vs kernel channels " + std::to_string(w.dim(1)));
  }
  require_odd(w.dim(2), "conv_spatial", "kh");
  require_odd(w.dim(3), "conv_spatial", "kw");
}

inline void check_conv_temporal(const Tensor& x, const Tensor& w) {
  require_rank(x, 5, "conv_temporal", "x");
  require_rank(w, 3, "conv_temporal", "w");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv_temporal: input channels " + std::to_string(x.dim(1)) +
                     " vs kernel channels " + std::to_string(w.dim(1)));
  }
  require_odd(w.dim(2), "conv_temporal", "kt");
}

inline void check_depthwise(const Tensor& seq, const Tensor& k) {
  require_rank(seq, 2, "depthwise_temporal_conv", "seq");
  require_rank(k, 2, "depthwise_temporal_conv", "kernels");
  if (k.dim(0) != seq.dim(1)) {
    throw ShapeError("depthwise_temporal_conv: kernel channels " + std::to_string(k.dim(0)) +
                     " vs sequence width " + std::to_string(seq.dim(1)));
  }
  require_odd(k.dim(1), "depthwise_temporal_conv", "kt");
}

}  // namespace detail

inline Tensor conv_spatial(const Tensor& x, const Tensor& w) {
  detail::check_conv_spatial(x, w);
  Tensor y({x.dim(0), w.dim(0), x.dim(2), x.dim(3), x.dim(4)});
  auto X = x.data();
  auto Wt = w.data();
  auto Y = y.data();
  detail::spatial_taps(x.dims(), w.dims(),
                       [&](std::size_t yi, std::size_t xi, std::size_t wi) { Y[yi] += X[xi] * Wt[wi]; });
  return y;
}

inline Tensor conv_spatial_grad_input(const Tensor& gy, const Tensor& x, const Tensor& w) {
  Tensor gx(x.dims());
  auto G = gy.data();
  auto Wt = w.data();
  auto GX = gx.data();
  detail::spatial_taps(x.dims(), w.dims(),
                       [&](std::size_t yi, std::size_t xi, std::size_t wi) { GX[xi] += G[yi] * Wt[wi]; });
  return gx;
}

inline Tensor conv_spatial_grad_weight(const Tensor& gy, const Tensor& x, const Tensor& w) {
  Tensor gw(w.dims());
  auto G = gy.data();
  auto X = x.data();
  auto GW = gw.data();
  detail::spatial_taps(x.dims(), w.dims(),
                       [&](std::size_t yi, std::size_t xi, std::size_t wi) { GW[wi] += G[yi] * X[xi]; });
  return gw;
}

inline Tensor conv_temporal(const Tensor& x, const Tensor& w) {
  detail::check_conv_temporal(x, w);
  Tensor y({x.dim(0), w.dim(0), x.dim(2), x.dim(3), x.dim(4)});
  auto X = x.data();
  auto Wt = w.data();
  auto Y = y.data();
  detail::temporal_taps(x.dims(), w.dims(),
                        [&](std::size_t yi, std::size_t xi, std::size_t wi) { Y[yi] += X[xi] * Wt[wi]; });
  return y;
}

inline Tensor conv_temporal_grad_input(const Tensor& gy, const Tensor& x, const Tensor& w) {
  Tensor gx(x.dims());
  auto G = gy.data();
  auto Wt = w.data();
  auto GX = gx.data();
  detail::temporal_taps(x.dims(), w.dims(),
                        [&](std::size_t yi, std::size_t xi, std::size_t wi) { GX[xi] += G[yi] * Wt[wi]; });
  return gx;
}

inline Tensor conv_temporal_grad_weight(const Tensor& gy, const Tensor& x, const Tensor& w) {
  Tensor gw(w.dims());
  auto G = gy.data();
  auto X = x.data();
  auto GW = gw.data();
  detail::temporal_taps(x.dims(), w.dims(),
                        [&](std::size_t yi, std::size_t xi, std::size_t wi) { GW[wi] += G[yi] * X[xi]; });
  return gw;
}

inline Tensor depthwise_temporal_conv(const Tensor& seq, const Tensor& kernels) {
  detail::check_depthwise(seq, kernels);
  Tensor y(seq.dims());
  auto S = seq.data();
  auto K = kernels.data();
  auto Y = y.data();
  detail::depthwise_taps(seq.dims(), kernels.dims(),
                         [&](std::size_t yi, std::size_t si, std::size_t ki) { Y[yi] += S[si] * K[ki]; });
  return y;
}

inline Tensor depthwise_grad_input(const Tensor& gy, const Tensor& seq, const Tensor& kernels) {
  Tensor gs(seq.dims());
  auto G = gy.data();
  auto K = kernels.data();
  auto GS = gs.data();
  detail::depthwise_taps(seq.dims(), kernels.dims(),
                         [&](std::size_t yi, std::size_t si, std::size_t ki) { GS[si] += G[yi] * K[ki]; });
  return gs;
}

inline Tensor depthwise_grad_kernels(const Tensor& gy, const Tensor& seq, const Tensor& kernels) {
  Tensor gk(kernels.dims());
  auto G = gy.data();
  auto S = seq.data();
  auto GK = gk.data();
  detail::depthwise_taps(seq.dims(), kernels.dims(),
                         [&](std::size_t yi, std::size_t si, std::size_t ki) { GK[ki] += G[yi] * S[si]; });
  return gk;
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops. Operands share a rank; each extent pair must be
// equal or contain a 1.

namespace detail {

inline Shape broadcast_dims(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": incompatible dims " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

// Row-major strides with zeros on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& out) {
  std::vector<std::size_t> strides(src.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    strides[i] = (src[i] == out[i]) ? s : 0;
    s *= src[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) over the broadcast result.
template <class F>
void broadcast_each(const Shape& ad, const Shape& bd, const Shape& od, F&& f) {
  const auto sa = broadcast_strides(ad, od);
  const auto sb = broadcast_strides(bd, od);
  const std::size_t rank = od.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t total = shape_volume(od);
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < od[ax]) break;
      ia -= sa[ax] * od[ax];
      ib -= sb[ax] * od[ax];
      idx[ax] = 0;
    }
  }
}

template <class Op>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name, Op op) {
  const Shape od = broadcast_dims(a.dims(), b.dims(), name);
  Tensor out(od);
  auto A = a.data();
  auto B = b.data();
  auto O = out.data();
  if (a.dims() == b.dims()) {
    for (std::size_t i = 0; i < O.size(); ++i) O[i] = op(A[i], B[i]);
    return out;
  }
  broadcast_each(a.dims(), b.dims(), od,
                 [&](std::size_t o, std::size_t ia, std::size_t ib) { O[o] = op(A[ia], B[ib]); });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, "mul", [](double x, double y) { return x * y; });
}

// Sums a broadcast-shaped gradient back down to `dims`.
inline Tensor reduce_to(const Tensor& g, const Shape& dims) {
  if (g.dims() == dims) return g;
  Tensor out(dims);
  auto G = g.data();
  auto O = out.data();
  detail::broadcast_each(dims, dims, g.dims(),
                         [&](std::size_t o, std::size_t i, std::size_t) { O[i] += G[o]; });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class F>
Tensor map_values(const Tensor& x, F&& f) {
  Tensor y(x.dims());
  auto X = x.data();
  auto Y = y.data();
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = f(X[i]);
  return y;
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor relu(const Tensor& x) {
  return map_values(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
inline Tensor sigmoid(const Tensor& x) {
  return map_values(x, [](double v) { return sigmoid(v); });
}
inline Tensor tanh(const Tensor& x) {
  return map_values(x, [](double v) { return std::tanh(v); });
}
inline Tensor scale(const Tensor& x, double s) {
  return map_values(x, [s](double v) { return v * s; });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor concat(const std::vector<const Tensor*>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front()->dims();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_dims = first;
  out_dims[axis] = 0;
  for (const Tensor* p : parts) {
    const Shape& d = p->dims();
    bool ok = d.size() == first.size();
    for (std::size_t i = 0; ok && i < d.size(); ++i)
      if (i != axis && d[i] != first[i]) ok = false;
    if (!ok) {
      throw ShapeError("concat: dims " + shape_str(d) + " incompatible with " + shape_str(first) +
                       " off axis " + std::to_string(axis));
    }
    out_dims[axis] += d[axis];
  }
  Tensor out(out_dims);
  const auto os = detail::split_axis(out_dims, axis);
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    const auto ps = detail::split_axis(p->dims(), axis);
    const std::size_t block = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(p->data().begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * os.extent * os.inner + offset * os.inner));
    }
    offset += ps.extent;
  }
  return out;
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis(x.dims(), axis);
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(s.extent));
  }
  Shape dims = x.dims();
  dims[axis] = end - begin;
  Tensor out(dims);
  const std::size_t block = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner), block,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * block));
  }
  return out;
}

/// Generalized transpose: out.dims[i] = x.dims[axes[i]].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& xd = x.dims();
  if (axes.size() != xd.size()) throw ShapeError("permute: axis list rank mismatch for " + shape_str(xd));
  std::vector<bool> seen(xd.size(), false);
  Shape od(xd.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= xd.size() || seen[axes[i]]) throw ShapeError("permute: invalid axis list");
    seen[axes[i]] = true;
    od[i] = xd[axes[i]];
  }
  std::vector<std::size_t> xstride(xd.size());
  std::size_t s = 1;
  for (std::size_t i = xd.size(); i-- > 0;) {
    xstride[i] = s;
    s *= xd[i];
  }
  Tensor out(od);
  std::vector<std::size_t> idx(od.size(), 0);
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < od.size(); ++i) src += idx[i] * xstride[axes[i]];
    out[o] = x[src];
    for (std::size_t ax = od.size(); ax-- > 0;) {
      if (++idx[ax] < od[ax]) break;
      idx[ax] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions. The reduced axis is removed; reducing a rank-1 tensor gives [1].

inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.dims(), axis);
  Tensor out(detail::drop_axis(x.dims(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + e) * s.inner + i];
  out *= 1.0 / static_cast<double>(s.extent);
  return out;
}

// Returns the max along `axis` and writes the winning index (lowest on ties).
inline Tensor max_axis(const Tensor& x, std::size_t axis, std::vector<std::size_t>* argmax = nullptr) {
  const auto s = detail::split_axis(x.dims(), axis);
  Tensor out(detail::drop_axis(x.dims(), axis), -std::numeric_limits<double>::infinity());
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double v = x[(o * s.extent + e) * s.inner + i];
        const std::size_t r = o * s.inner + i;
        if (v > out[r]) {
          out[r] = v;
          if (argmax) (*argmax)[r] = e;
        }
      }
  return out;
}

// Max-subtracted softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.dims(), axis);
  Tensor y(x.dims());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) m = std::max(m, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(x[base + e * s.inner] - m);
        y[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= z;
    }
  return y;
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto s = detail::split_axis(x.dims(), axis);
  Tensor y(x.dims());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) m = std::max(m, x[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) z += std::exp(x[base + e * s.inner] - m);
      const double lz = m + std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] = x[base + e * s.inner] - lz;
    }
  return y;
}

// dx = y * (dy - sum_axis(dy * y))
inline Tensor softmax_grad(const Tensor& y, const Tensor& gy, std::size_t axis) {
  const auto s = detail::split_axis(y.dims(), axis);
  Tensor gx(y.dims());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double dot = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) dot += gy[base + e * s.inner] * y[base + e * s.inner];
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t k = base + e * s.inner;
        gx[k] = y[k] * (gy[k] - dot);
      }
    }
  return gx;
}

// dx = dy - softmax(x) * sum_axis(dy), with y = log_softmax(x).
inline Tensor log_softmax_grad(const Tensor& y, const Tensor& gy, std::size_t axis) {
  const auto s = detail::split_axis(y.dims(), axis);
  Tensor gx(y.dims());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) total += gy[base + e * s.inner];
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t k = base + e * s.inner;
        gx[k] = gy[k] - std::exp(y[k]) * total;
      }
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Region pooling

/// Normalized keyframe box, coordinates in [0,1]; x runs along W, y along H.
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 1.0, y2 = 1.0;

  void validate() const {
    const bool ok = x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 && x1 < x2 && y1 < y2;
    if (!ok) {
      throw ContractError("invalid box (" + std::to_string(x1) + "," + std::to_string(y1) + "," +
                          std::to_string(x2) + "," + std::to_string(y2) + ")");
    }
  }
};

inline double iou_2d(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct PoolExtents {
  std::size_t t = 1, h = 1, w = 1;
};

namespace detail {

struct CellRange {
  std::size_t begin, end;
};

// Cells [floor(lo*n), ceil(hi*n)) covered by a normalized interval.
inline CellRange cover(double lo, double hi, std::size_t n) {
  const auto b = static_cast<std::size_t>(std::floor(lo * static_cast<double>(n)));
  const auto e = std::min(n, static_cast<std::size_t>(std::ceil(hi * static_cast<double>(n))));
  if (e <= b) throw ContractError("box maps to zero cells");
  return {b, e};
}

// Bin i of `bins` over a range: edges rounded outward.
inline CellRange bin(const CellRange& r, std::size_t i, std::size_t bins) {
  const std::size_t len = r.end - r.begin;
  return {r.begin + i * len / bins, r.begin + ((i + 1) * len + bins - 1) / bins};
}

}  // namespace detail

/// Max pooling of the box (extended over all T) into t*h*w bins per channel.
/// `argmax`, when given, receives the flat input index chosen for each output.
inline Tensor roi_pool_3d(const Tensor& feat, const Box& box, const PoolExtents& out,
                          std::vector<std::size_t>* argmax = nullptr) {
  detail::require_rank(feat, 4, "roi_pool_3d", "feat");
  box.validate();
  if (out.t == 0 || out.h == 0 || out.w == 0) throw ContractError("roi_pool_3d: output extents must be >= 1");
  const std::size_t C = feat.dim(0), T = feat.dim(1), H = feat.dim(2), W = feat.dim(3);
  const detail::CellRange rt{0, T};
  const detail::CellRange ry = detail::cover(box.y1, box.y2, H);
  const detail::CellRange rx = detail::cover(box.x1, box.x2, W);
  Tensor y({C, out.t, out.h, out.w});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t bt = 0; bt < out.t; ++bt) {
      const auto st = detail::bin(rt, bt, out.t);
      for (std::size_t bh = 0; bh < out.h; ++bh) {
        const auto sh = detail::bin(ry, bh, out.h);
        for (std::size_t bw = 0; bw < out.w; ++bw, ++o) {
          const auto sw = detail::bin(rx, bw, out.w);
          std::size_t best = ((c * T + st.begin) * H + sh.begin) * W + sw.begin;
          for (std::size_t t = st.begin; t < st.end; ++t)
            for (std::size_t h = sh.begin; h < sh.end; ++h)
              for (std::size_t w = sw.begin; w < sw.end; ++w) {
                const std::size_t i = ((c * T + t) * H + h) * W + w;
                if (feat[i] > feat[best]) best = i;
              }
          y[o] = feat[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  return y;
}

}  // namespace vidkern
