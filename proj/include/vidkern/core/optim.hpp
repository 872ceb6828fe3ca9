#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "vidkern/core/autodiff.hpp"

namespace vidkern {

using ParamRefs = std::vector<Tensor*>;

/// Uniform(-s, s) with s = 1/sqrt(fan_in).
inline Tensor init_uniform(Shape dims, std::size_t fan_in, SplitMix64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  return Tensor::uniform(std::move(dims), rng, -s, s);
}

inline double global_norm(const ParamRefs& params, const Gradients& grads) {
  double sq = 0.0;
  for (const Tensor* p : params) {
    if (!grads.has(*p)) continue;
    for (double g : grads.of(*p).data()) sq += g * g;
  }
  return std::sqrt(sq);
}

// p <- p - lr * g. Parameters that were never bound are left untouched.
inline void sgd_step(const ParamRefs& params, const Gradients& grads, double lr) {
  for (Tensor* p : params) {
    if (!grads.has(*p)) continue;
    const Tensor& g = grads.of(*p);
    for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] -= lr * g[i];
  }
}

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Optional global-norm clip applied before the moment update; <= 0 disables.
  void set_clip(double max_norm) { clip_ = max_norm; }

  void step(const ParamRefs& params, const Gradients& grads) {
    ++t_;
    double factor = 1.0;
    if (clip_ > 0.0) {
      const double norm = global_norm(params, grads);
      if (norm > clip_) factor = clip_ / norm;
    }
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Tensor* p : params) {
      if (!grads.has(*p)) continue;
      const Tensor& g = grads.of(*p);
      auto [it, fresh] = state_.try_emplace(p);
      if (fresh) {
        it->second.m = Tensor(p->dims());
        it->second.v = Tensor(p->dims());
      }
      Tensor& m = it->second.m;
      Tensor& v = it->second.v;
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double gi = g[i] * factor;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        (*p)[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  struct Moments {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  double clip_ = 0.0;
  long t_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

}  // namespace vidkern
