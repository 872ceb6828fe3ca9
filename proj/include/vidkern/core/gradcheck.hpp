#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vidkern/core/autodiff.hpp"
#include "vidkern/core/rng.hpp"

namespace vidkern {

struct GradCheckOptions {
  std::size_t coordinates = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error so that near-zero gradients are
  // judged on absolute error (tolerance * floor) instead of dividing by ~0.
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares backward() against central finite differences at randomly chosen
/// coordinates, cycling through the inputs so each one is probed.
inline GradCheckReport check_gradients(std::string name, const LossFn& loss_fn,
                                       const std::vector<Tensor>& inputs, SplitMix64& rng,
                                       const GradCheckOptions& opt = {}) {
  if (inputs.empty()) throw ContractError("check_gradients: no inputs");
  GradCheckReport report;
  report.name = std::move(name);

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  const Gradients grads = tape.backward(loss_fn(tape, vars));

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape probe;
    std::vector<Var> pv;
    for (const Tensor& t : xs) pv.push_back(probe.constant(t));
    return loss_fn(probe, pv).value().item();
  };

  std::vector<Tensor> work = inputs;
  for (std::size_t c = 0; c < opt.coordinates; ++c) {
    const std::size_t which = c % inputs.size();
    const std::size_t flat = rng.below(inputs[which].size());
    const double orig = work[which][flat];
    work[which][flat] = orig + opt.step;
    const double up = evaluate(work);
    work[which][flat] = orig - opt.step;
    const double down = evaluate(work);
    work[which][flat] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double analytic = grads[vars[which].id][flat];
    const double err = relative_error(analytic, numeric, opt.denominator_floor);
    report.max_rel_error = std::max(report.max_rel_error, err);
    ++report.checked;
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

using ParamLossFn = std::function<Var(Tape&)>;

/// Same check for losses over parameter tensors bound with Tape::param. The
/// tensors are perturbed in place and restored afterwards.
inline GradCheckReport check_param_gradients(std::string name, const ParamLossFn& loss_fn,
                                             const std::vector<Tensor*>& params, SplitMix64& rng,
                                             const GradCheckOptions& opt = {}) {
  if (params.empty()) throw ContractError("check_param_gradients: no parameters");
  GradCheckReport report;
  report.name = std::move(name);

  Tape tape;
  const Gradients grads = tape.backward(loss_fn(tape));
  auto evaluate = [&] {
    Tape probe;
    return loss_fn(probe).value().item();
  };

  for (std::size_t c = 0; c < opt.coordinates; ++c) {
    Tensor& p = *params[c % params.size()];
    const std::size_t flat = rng.below(p.size());
    const double orig = p[flat];
    p[flat] = orig + opt.step;
    const double up = evaluate();
    p[flat] = orig - opt.step;
    const double down = evaluate();
    p[flat] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double analytic = grads.has(p) ? grads.of(p)[flat] : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric, opt.denominator_floor));
    ++report.checked;
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace vidkern
