#pragma once

// Spatio-temporal action localization head. Each person proposal is pooled
// from its clip's feature map, attends over that map with an actor-specific
// 1x1x1 filter, and is then refined by a GCN over a relation graph spanning
// every proposal in the clip window. Also provides frame-level mAP.

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "vidkern/core/ops.hpp"
#include "vidkern/core/optim.hpp"
#include "vidkern/core/parallel.hpp"

namespace vidkern {

inline constexpr std::size_t kClipsPerWindow = 8;

struct ClipFeatureMap {
  std::size_t index = 0;
  Tensor feat;  // [C,T,H,W]
};

struct BoxProposal {
  std::size_t clip = 0;
  Box box;
  double score = 0.0;
  Tensor actor;  // [Dp], filled by the forward pass
};

struct LSTRConfig {
  std::size_t channels = 8;
  PoolExtents pool{2, 2, 2};
  std::size_t actor_dim = 8;
  std::size_t classes = 3;
  std::size_t gcn_layers = 2;
  double lambda = 0.5;

  std::size_t node_dim() const { return actor_dim + channels; }

  void validate() const {
    if (channels == 0 || actor_dim == 0 || classes == 0) throw ConfigError("lstr: dims must be positive");
    if (pool.t == 0 || pool.h == 0 || pool.w == 0) throw ConfigError("lstr: pool extents must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lstr: lambda must lie in [0,1]");
  }
};

struct LSTRParams {
  Tensor actor_proj;  // [C*t*h*w, Dp]
  Tensor kernel_gen;  // [Dp, C]; theta = actor * kernel_gen
  std::vector<Tensor> gcn;  // [F, F] each, F = Dp + C
  Tensor classifier;  // [F, K]
  Tensor bias;        // [1, K]

  ParamRefs refs() {
    ParamRefs out{&actor_proj, &kernel_gen};
    for (auto& w : gcn) out.push_back(&w);
    out.insert(out.end(), {&classifier, &bias});
    return out;
  }

  static LSTRParams init(const LSTRConfig& cfg, SplitMix64& rng) {
    cfg.validate();
    const std::size_t pooled = cfg.channels * cfg.pool.t * cfg.pool.h * cfg.pool.w;
    const std::size_t F = cfg.node_dim();
    LSTRParams p;
    p.actor_proj = init_uniform({pooled, cfg.actor_dim}, pooled, rng);
    p.kernel_gen = init_uniform({cfg.actor_dim, cfg.channels}, cfg.actor_dim, rng);
    for (std::size_t l = 0; l < cfg.gcn_layers; ++l) p.gcn.push_back(init_uniform({F, F}, F, rng));
    p.classifier = init_uniform({F, cfg.classes}, F, rng);
    p.bias = Tensor({1, cfg.classes});
    return p;
  }
};

// ---------------------------------------------------------------------------
// Short-term relation

namespace detail {

inline void require_feat(const Shape& f, const char* op) {
  if (f.size() != 4) throw ShapeError(std::string(op) + ": feature map must be [C,T,H,W], got " + shape_str(f));
}

}  // namespace detail

/// theta = actor * kernel_gen (a per-actor 1x1x1 filter over channels);
/// attention = softmax of theta . feat over all T*H*W positions.
inline Var adaptive_attention(Var actor, Var feat, Var kernel_gen) {
  const Shape fd = feat.dims();
  detail::require_feat(fd, "adaptive_attention");
  const std::size_t C = fd[0], THW = fd[1] * fd[2] * fd[3];
  if (actor.dims().size() != 1 || kernel_gen.dims() != Shape{actor.dims()[0], C}) {
    throw ShapeError("adaptive_attention: actor " + shape_str(actor.dims()) + ", kernel generator " +
                     shape_str(kernel_gen.dims()) + ", feature map " + shape_str(fd));
  }
  Var theta = matmul(reshape(actor, {1, actor.dims()[0]}), kernel_gen);  // [1,C]
  Var scores = matmul(theta, reshape(feat, {C, THW}));                    // [1,THW]
  return reshape(softmax(scores, 1), {fd[1], fd[2], fd[3]});
}

inline Tensor adaptive_attention(const Tensor& actor, const Tensor& feat, const Tensor& kernel_gen) {
  Tape tape;
  return adaptive_attention(tape.constant(actor), tape.constant(feat), tape.constant(kernel_gen)).value();
}

/// context[c] = sum over positions of attn * feat[c].
inline Var attention_pool_3d(Var feat, Var attn) {
  const Shape fd = feat.dims();
  detail::require_feat(fd, "attention_pool_3d");
  if (attn.dims() != Shape{fd[1], fd[2], fd[3]}) {
    throw ShapeError("attention_pool_3d: attention " + shape_str(attn.dims()) + " vs feature map " + shape_str(fd));
  }
  const std::size_t THW = fd[1] * fd[2] * fd[3];
  return reshape(matmul(reshape(feat, {fd[0], THW}), reshape(attn, {THW, 1})), {fd[0]});
}

inline Tensor attention_pool_3d(const Tensor& feat, const Tensor& attn) {
  Tape tape;
  return attention_pool_3d(tape.constant(feat), tape.constant(attn)).value();
}

// ---------------------------------------------------------------------------
// Long-term relation

struct RelationGraph {
  Tensor adjacency;   // [M,M]
  Tensor normalized;  // D^-1/2 A D^-1/2
};

inline double clipped_cosine(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: feature sizes differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(0.0, dot / (std::sqrt(na) * std::sqrt(nb)));
}

/// A_ij = lambda * max(0, cos(f_i, f_j)) + (1 - lambda) * IoU(b_i, b_j), A_ii = 1.
inline RelationGraph build_relation_graph(const std::vector<BoxProposal>& proposals, double lambda) {
  if (proposals.empty()) throw ContractError("build_relation_graph: no proposals");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("build_relation_graph: lambda must lie in [0,1]");
  const std::size_t M = proposals.size();
  for (const auto& p : proposals)
    if (p.actor.empty()) throw ContractError("build_relation_graph: actor features not populated");
  RelationGraph g{Tensor({M, M}), Tensor({M, M})};
  for (std::size_t i = 0; i < M; ++i) {
    g.adjacency.at({i, i}) = 1.0;
    for (std::size_t j = i + 1; j < M; ++j) {
      const double a = lambda * clipped_cosine(proposals[i].actor, proposals[j].actor) +
                       (1.0 - lambda) * iou_2d(proposals[i].box, proposals[j].box);
      g.adjacency.at({i, j}) = a;
      g.adjacency.at({j, i}) = a;
    }
  }
  std::vector<double> inv_sqrt(M);
  for (std::size_t i = 0; i < M; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < M; ++j) deg += g.adjacency.at({i, j});
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = i; j < M; ++j) {
      const double v = inv_sqrt[i] * g.adjacency.at({i, j}) * inv_sqrt[j];
      g.normalized.at({i, j}) = v;
      g.normalized.at({j, i}) = v;
    }
  return g;
}

/// relu(Ahat * X * W).
inline Var gcn_layer(Var x, Var ahat, Var w) {
  const Shape& xd = x.dims();
  if (xd.size() != 2 || ahat.dims() != Shape{xd[0], xd[0]} || w.dims().size() != 2 || w.dims()[0] != xd[1]) {
    throw ShapeError("gcn_layer: X " + shape_str(xd) + ", Ahat " + shape_str(ahat.dims()) + ", W " +
                     shape_str(w.dims()));
  }
  return relu(matmul(matmul(ahat, x), w));
}

inline Tensor gcn_layer(const Tensor& x, const Tensor& ahat, const Tensor& w) {
  Tape tape;
  return gcn_layer(tape.constant(x), tape.constant(ahat), tape.constant(w)).value();
}

// ---------------------------------------------------------------------------

struct LSTROutput {
  Var scores;  // [M,K] sigmoid probabilities
  Var nodes;   // [M,F] node features before the GCN
  Var hidden;  // [M,F] node features after the GCN
  RelationGraph graph;
};

/// Per proposal: roi pool, relu(projection) as the actor feature, attention
/// context; nodes = [actor, context]; graph over all proposals; GCN; sigmoid.
/// The relation graph is built from values and treated as a constant.
inline LSTROutput lstr_forward(Tape& tape, const std::vector<ClipFeatureMap>& clips,
                               std::vector<BoxProposal>& proposals, const LSTRConfig& cfg,
                               const LSTRParams& params) {
  cfg.validate();
  if (proposals.empty()) throw ContractError("lstr_forward: no proposals");
  if (params.gcn.size() != cfg.gcn_layers) throw ShapeError("lstr_forward: GCN layer count mismatch");
  for (const auto& c : clips) {
    detail::require_feat(c.feat.dims(), "lstr_forward");
    if (c.feat.dims() != clips.front().feat.dims()) throw ShapeError("lstr_forward: clips differ in shape");
    if (c.feat.dim(0) != cfg.channels) throw ShapeError("lstr_forward: clip channels do not match config");
  }
  Var proj = tape.param(params.actor_proj);
  Var kgen = tape.param(params.kernel_gen);
  std::vector<Var> clip_vars;
  for (const auto& c : clips) clip_vars.push_back(tape.constant(c.feat));

  std::vector<Var> rows;
  for (auto& p : proposals) {
    if (p.clip >= clips.size()) {
      throw DataError("proposal refers to clip " + std::to_string(p.clip) + " but only " +
                      std::to_string(clips.size()) + " clips are present");
    }
    Var feat = clip_vars[p.clip];
    Var pooled = roi_pool_3d(feat, p.box, cfg.pool);
    Var actor = relu(matmul(reshape(pooled, {1, pooled.value().size()}), proj));  // [1,Dp]
    p.actor = actor.value().reshaped({cfg.actor_dim});
    Var attn = adaptive_attention(reshape(actor, {cfg.actor_dim}), feat, kgen);
    Var context = attention_pool_3d(feat, attn);
    rows.push_back(concat({actor, reshape(context, {1, cfg.channels})}, 1));
  }
  Var nodes = concat(rows, 0);
  RelationGraph graph = build_relation_graph(proposals, cfg.lambda);
  Var ahat = tape.constant(graph.normalized);
  Var x = nodes;
  for (const auto& w : params.gcn) x = gcn_layer(x, ahat, tape.param(w));
  Var scores = sigmoid(add(matmul(x, tape.param(params.classifier)), tape.param(params.bias)));
  return {scores, nodes, x, std::move(graph)};
}

inline Tensor lstr_forward(const std::vector<ClipFeatureMap>& clips, std::vector<BoxProposal>& proposals,
                           const LSTRConfig& cfg, const LSTRParams& params) {
  Tape tape;
  return lstr_forward(tape, clips, proposals, cfg, params).scores.value();
}

/// Mean binary cross-entropy of sigmoid scores against {0,1} targets.
inline Var multilabel_bce(Var scores, const Tensor& targets) {
  if (scores.dims() != targets.dims()) throw ShapeError("multilabel_bce: score/target shape mismatch");
  Tape& tape = *scores.tape;
  constexpr double eps = 1e-12;
  Var t = tape.constant(targets);
  Tensor ones(targets.dims(), 1.0);
  Var one_minus_t = tape.constant(sub(ones, targets));
  Var pos = mul(t, log(add_scalar(scores, eps)));
  Var neg = mul(one_minus_t, log(add_scalar(scale(scores, -1.0), 1.0 + eps)));
  return scale(sum_all(add(pos, neg)), -1.0 / static_cast<double>(targets.size()));
}

inline Tensor two_stream_average(const Tensor& rgb, const Tensor& flow) {
  if (rgb.dims() != flow.dims()) {
    throw ShapeError("two_stream_average: " + shape_str(rgb.dims()) + " vs " + shape_str(flow.dims()));
  }
  return scale(add(rgb, flow), 0.5);
}

// ---------------------------------------------------------------------------
// Frame-level mAP

struct FrameDetection {
  std::size_t frame = 0;
  std::size_t cls = 0;
  Box box;
  double score = 0.0;
};

struct FrameGroundTruth {
  std::size_t frame = 0;
  std::size_t cls = 0;
  Box box;
};

/// All-points interpolated AP for one class.
inline double average_precision(const std::vector<FrameDetection>& dets, const std::vector<FrameGroundTruth>& gts,
                                std::size_t cls, double iou_thr = 0.5) {
  std::vector<const FrameGroundTruth*> gt;
  for (const auto& g : gts)
    if (g.cls == cls) gt.push_back(&g);
  if (gt.empty()) return 0.0;
  std::vector<const FrameDetection*> order;
  for (const auto& d : dets)
    if (d.cls == cls) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const FrameDetection* a, const FrameDetection* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->frame != b->frame) return a->frame < b->frame;
    const auto ka = std::tie(a->box.x1, a->box.y1, a->box.x2, a->box.y2);
    const auto kb = std::tie(b->box.x1, b->box.y1, b->box.x2, b->box.y2);
    return ka < kb;
  });

  std::vector<bool> taken(gt.size(), false);
  std::vector<double> precision;
  std::vector<bool> is_tp;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const FrameDetection& d = *order[r];
    std::ptrdiff_t best = -1;
    double best_iou = iou_thr;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g] || gt[g]->frame != d.frame) continue;
      const double iou = iou_2d(d.box, gt[g]->box);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<std::ptrdiff_t>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
    is_tp.push_back(best >= 0);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
  }
  // Precision envelope, then one recall step of 1/|GT| per true positive.
  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double sum = 0.0;
  for (std::size_t r = 0; r < precision.size(); ++r)
    if (is_tp[r]) sum += precision[r];
  return sum / static_cast<double>(gt.size());
}

/// Mean AP over classes with at least one ground-truth box; 0 when there are none.
inline double frame_map(const std::vector<FrameDetection>& dets, const std::vector<FrameGroundTruth>& gts,
                        double iou_thr = 0.5) {
  std::vector<std::size_t> classes;
  for (const auto& g : gts) classes.push_back(g.cls);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.empty()) return 0.0;
  std::vector<double> ap(classes.size());
  parallel_for(classes.size(), [&](std::size_t i) { ap[i] = average_precision(dets, gts, classes[i], iou_thr); });
  double sum = 0.0;
  for (double a : ap) sum += a;
  return sum / static_cast<double>(classes.size());
}

}  // namespace vidkern
