#pragma once

// Trimmed action recognition: per-stream feature extraction, quantization and
// linear classification, followed by linear late fusion of the per-stream
// class probabilities with weights tuned on a validation split.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vidkern/backbone.hpp"
#include "vidkern/core/parallel.hpp"
#include "vidkern/quantization.hpp"

namespace vidkern {

struct StreamPrediction {
  std::string name;
  Tensor scores;  // [V, C], rows are probability vectors

  std::size_t videos() const { return scores.dim(0); }
  std::size_t classes() const { return scores.dim(1); }

  void validate(double tol = 1e-9) const {
    if (scores.rank() != 2) throw ShapeError("stream '" + name + "' scores must be [V,C]");
    for (std::size_t v = 0; v < videos(); ++v) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes(); ++c) {
        const double p = scores.at({v, c});
        if (!(p >= 0.0)) throw DataError("stream '" + name + "' has a negative or NaN score");
        s += p;
      }
      if (std::abs(s - 1.0) > tol) throw DataError("stream '" + name + "' row does not sum to 1");
    }
  }
};

struct FusionWeights {
  std::vector<double> w;

  void validate(double tol = 1e-9) const {
    double s = 0.0;
    for (double v : w) {
      if (!(v >= 0.0)) throw ContractError("fusion weights must be nonnegative");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw ContractError("fusion weights must sum to 1");
  }
};

/// Fraction of rows whose label is among the k highest scores. Ties rank the
/// lower class index first.
inline double topk_accuracy(const Tensor& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  if (scores.rank() != 2) throw ShapeError("topk_accuracy: scores must be [V,C]");
  const std::size_t V = scores.dim(0), C = scores.dim(1);
  if (labels.size() != V) throw ShapeError("topk_accuracy: " + std::to_string(labels.size()) + " labels for " +
                                           std::to_string(V) + " videos");
  if (k < 1 || k > C) throw ContractError("topk_accuracy: k must be in [1, " + std::to_string(C) + "]");
  std::size_t hits = 0;
  for (std::size_t v = 0; v < V; ++v) {
    const std::size_t y = labels[v];
    if (y >= C) throw DataError("topk_accuracy: label " + std::to_string(y) + " out of range");
    const double* row = &scores.data()[v * C];
    std::size_t rank = 0;
    for (std::size_t c = 0; c < C; ++c)
      if (row[c] > row[y] || (row[c] == row[y] && c < y)) ++rank;
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(V);
}

inline Tensor fuse(const std::vector<StreamPrediction>& streams, const FusionWeights& w) {
  if (streams.empty()) throw ContractError("fuse: no streams");
  if (w.w.size() != streams.size()) {
    throw ShapeError("fuse: " + std::to_string(w.w.size()) + " weights for " + std::to_string(streams.size()) +
                     " streams");
  }
  const Shape& dims = streams.front().scores.dims();
  Tensor out(dims);
  for (std::size_t s = 0; s < streams.size(); ++s) {
    if (streams[s].scores.dims() != dims) {
      throw ShapeError("fuse: stream '" + streams[s].name + "' has dims " + shape_str(streams[s].scores.dims()) +
                       ", expected " + shape_str(dims));
    }
    const double ws = w.w[s];
    auto src = streams[s].scores.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ws * src[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion weight tuning

struct FusionScore {
  double top1 = -1.0;
  double top5 = -1.0;
};

namespace detail {

inline std::size_t grid_units(double resolution) {
  if (!(resolution > 0.0) || resolution > 1.0) throw ConfigError("fusion grid resolution must be in (0, 1]");
  const double inv = 1.0 / resolution;
  const auto units = static_cast<std::size_t>(std::llround(inv));
  if (std::abs(static_cast<double>(units) - inv) > 1e-9) {
    throw ConfigError("fusion grid resolution must divide 1 evenly");
  }
  return units;
}

inline FusionWeights weights_from_counts(const std::vector<std::size_t>& counts, std::size_t units) {
  FusionWeights w;
  for (std::size_t c : counts) w.w.push_back(static_cast<double>(c) / static_cast<double>(units));
  return w;
}

struct FusionEvaluator {
  const std::vector<StreamPrediction>& streams;
  const std::vector<std::size_t>& labels;
  std::size_t units;
  std::size_t k5;

  FusionScore operator()(const std::vector<std::size_t>& counts) const {
    const Tensor fused = fuse(streams, weights_from_counts(counts, units));
    return {topk_accuracy(fused, labels, 1), topk_accuracy(fused, labels, k5)};
  }
};

// Strict preference: higher top-1, then higher top-5, then lexicographically
// smaller count vector.
inline bool better(const FusionScore& a, const std::vector<std::size_t>& ca, const FusionScore& b,
                   const std::vector<std::size_t>& cb) {
  if (a.top1 != b.top1) return a.top1 > b.top1;
  if (a.top5 != b.top5) return a.top5 > b.top5;
  return ca < cb;
}

// Gives `k` units to coordinate i and spreads the remainder over the others
// in proportion to their current counts (largest remainder, lower index wins).
inline std::vector<std::size_t> redistribute(const std::vector<std::size_t>& counts, std::size_t i, std::size_t k,
                                             std::size_t units) {
  const std::size_t S = counts.size();
  std::vector<std::size_t> out(S, 0);
  out[i] = k;
  const std::size_t rest = units - k;
  std::size_t others_total = 0;
  for (std::size_t j = 0; j < S; ++j)
    if (j != i) others_total += counts[j];
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t given = 0;
  for (std::size_t j = 0; j < S; ++j) {
    if (j == i) continue;
    const double share = others_total > 0
                             ? static_cast<double>(rest) * static_cast<double>(counts[j]) / static_cast<double>(others_total)
                             : static_cast<double>(rest) / static_cast<double>(S - 1);
    const auto whole = static_cast<std::size_t>(std::floor(share));
    out[j] = whole;
    given += whole;
    frac.emplace_back(share - static_cast<double>(whole), j);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; given < rest && r < frac.size(); ++r, ++given) ++out[frac[r].second];
  return out;
}

inline void enumerate_compositions(std::size_t parts, std::size_t total, std::vector<std::size_t>& prefix,
                                   const std::function<void(const std::vector<std::size_t>&)>& visit) {
  if (prefix.size() + 1 == parts) {
    prefix.push_back(total);
    visit(prefix);
    prefix.pop_back();
    return;
  }
  for (std::size_t k = 0; k <= total; ++k) {
    prefix.push_back(k);
    enumerate_compositions(parts, total - k, prefix, visit);
    prefix.pop_back();
  }
}

}  // namespace detail

inline constexpr std::size_t kExhaustiveFusionStreams = 4;

/// Simplex grid search maximizing top-1 on the given split. Up to four
/// streams the whole grid is searched; beyond that, a heuristic coordinate
/// ascent (10 sweeps, starting from the best of uniform and one-hot points)
/// runs on the same grid.
inline FusionWeights tune_fusion_weights(const std::vector<StreamPrediction>& streams,
                                         const std::vector<std::size_t>& labels, double resolution = 0.05) {
  if (streams.empty()) throw ContractError("tune_fusion_weights: no streams");
  const std::size_t S = streams.size();
  const std::size_t units = detail::grid_units(resolution);
  const detail::FusionEvaluator eval{streams, labels, units, std::min<std::size_t>(5, streams.front().classes())};

  std::vector<std::size_t> best;
  FusionScore best_score;
  auto consider = [&](const std::vector<std::size_t>& counts) {
    const FusionScore sc = eval(counts);
    if (best.empty() || detail::better(sc, counts, best_score, best)) {
      best = counts;
      best_score = sc;
    }
  };

  if (S <= kExhaustiveFusionStreams) {
    std::vector<std::size_t> prefix;
    detail::enumerate_compositions(S, units, prefix, consider);
    return detail::weights_from_counts(best, units);
  }

  std::vector<std::size_t> uniform(S, units / S);
  for (std::size_t i = 0; i < units % S; ++i) ++uniform[i];
  consider(uniform);
  for (std::size_t i = 0; i < S; ++i) {
    std::vector<std::size_t> onehot(S, 0);
    onehot[i] = units;
    consider(onehot);
  }
  for (int sweep = 0; sweep < 10; ++sweep) {
    const std::vector<std::size_t> before = best;
    for (std::size_t i = 0; i < S; ++i) {
      const std::vector<std::size_t> anchor = best;
      for (std::size_t k = 0; k <= units; ++k) consider(detail::redistribute(anchor, i, k, units));
    }
    if (best == before) break;
  }
  return detail::weights_from_counts(best, units);
}

// ---------------------------------------------------------------------------
// Per-stream models and the end-to-end pipeline

struct StreamModel {
  std::string name;
  Quantizer quantizer = Quantizer::AP;
  bool use_backbone = false;  // inputs are raw clips [N,C_in,T,H,W] instead of [T,D] features
  TCPParams tcp;              // only read when quantizer == TCP
  Tensor classifier;          // [D, C]
  Tensor bias;                // [1, C]

  std::size_t classes() const { return classifier.dim(1); }

  ParamRefs trainable() {
    ParamRefs refs{&classifier, &bias};
    if (quantizer == Quantizer::TCP) tcp.collect(refs);
    return refs;
  }

  static StreamModel init(std::string name, Quantizer q, bool use_backbone, std::size_t width,
                          std::size_t classes, SplitMix64& rng) {
    StreamModel m;
    m.name = std::move(name);
    m.quantizer = q;
    m.use_backbone = use_backbone;
    m.tcp = TCPParams::init(width, rng);
    m.classifier = init_uniform({width, classes}, width, rng);
    m.bias = Tensor({1, classes});
    return m;
  }
};

struct SharedBackbone {
  const BackboneConfig* config = nullptr;
  const BackboneParams* params = nullptr;
};

/// Video input -> clip-level feature sequence. Raw clips [N,C_in,T,H,W] go
/// through the backbone and are averaged over time, giving one feature per clip.
inline FeatureSequence extract_sequence(const Tensor& video, const StreamModel& m, const SharedBackbone& bb) {
  if (!m.use_backbone) return FeatureSequence(video);
  if (!bb.config || !bb.params) throw ConfigError("stream '" + m.name + "' needs a backbone");
  const Tensor per_step = backbone_forward(video, *bb.config, *bb.params);  // [N,T,D]
  return FeatureSequence(mean_axis(per_step, 1));
}

/// Logits [1, C] for one sequence.
inline Var stream_logits(Var feats, const StreamModel& m) {
  Tape& tape = *feats.tape;
  Var rep = reshape(quantize(feats, m.quantizer, &m.tcp), {1, feats.dims()[1]});
  return add(matmul(rep, tape.param(m.classifier)), tape.param(m.bias));
}

inline StreamPrediction predict_stream(const std::vector<FeatureSequence>& seqs, const StreamModel& m) {
  if (seqs.empty()) throw ContractError("predict_stream: no videos");
  const std::size_t C = m.classes();
  Tensor scores({seqs.size(), C});
  for (std::size_t v = 0; v < seqs.size(); ++v) {
    Tape tape;
    const Tensor p = softmax(stream_logits(tape.constant(seqs[v].feats()), m).value(), 1);
    std::copy(p.data().begin(), p.data().end(), scores.data().begin() + static_cast<std::ptrdiff_t>(v * C));
  }
  return {m.name, std::move(scores)};
}

struct TrainOptions {
  std::size_t epochs = 150;
  double learning_rate = 0.05;
};

/// Full-batch Adam on mean cross-entropy over the classifier and, for TCP
/// streams, the TCP blocks. Returns the final training loss.
inline double train_stream(StreamModel& m, const std::vector<FeatureSequence>& seqs,
                           const std::vector<std::size_t>& labels, const TrainOptions& opt = {}) {
  if (seqs.size() != labels.size() || seqs.empty()) throw ContractError("train_stream: need one label per video");
  Adam adam(opt.learning_rate);
  const ParamRefs params = m.trainable();
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Tape tape;
    std::vector<Var> terms;
    for (std::size_t v = 0; v < seqs.size(); ++v) {
      if (labels[v] >= m.classes()) throw DataError("train_stream: label out of range");
      Var lp = log_softmax(stream_logits(tape.constant(seqs[v].feats()), m), 1);
      terms.push_back(pick(lp, labels[v]));
    }
    Var loss = scale(sum_all(concat(terms, 0)), -1.0 / static_cast<double>(seqs.size()));
    last = loss.value().item();
    adam.step(params, tape.backward(loss));
  }
  return last;
}

struct RecognitionResult {
  std::vector<StreamPrediction> streams;
  Tensor fused;
};

/// Multi-stream feature extraction -> quantization -> classification per
/// stream (in parallel), then linear fusion with the given weights.
inline RecognitionResult recognize_pipeline(const std::vector<std::vector<Tensor>>& stream_videos,
                                            const std::vector<StreamModel>& models, const SharedBackbone& bb,
                                            const FusionWeights& weights) {
  if (stream_videos.size() != models.size()) throw ShapeError("recognize_pipeline: stream/model count mismatch");
  RecognitionResult out;
  out.streams.resize(models.size());
  parallel_for(models.size(), [&](std::size_t s) {
    std::vector<FeatureSequence> seqs;
    for (const Tensor& v : stream_videos[s]) seqs.push_back(extract_sequence(v, models[s], bb));
    out.streams[s] = predict_stream(seqs, models[s]);
  });
  out.fused = fuse(out.streams, weights);
  return out;
}

}  // namespace vidkern
