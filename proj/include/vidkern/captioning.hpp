#pragma once

// Dense event captioning: actionness-based temporal proposals, a two-layer
// LSTM decoder with temporal attention over frame features, cross-entropy
// training and self-critical policy-gradient fine-tuning.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vidkern/core/ops.hpp"
#include "vidkern/core/optim.hpp"

namespace vidkern {

using TokenId = std::size_t;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr std::size_t kReservedTokens = 3;

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<bos>", "<eos>", "<unk>"} {
    for (TokenId i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
  }

  /// Word tokens get ids starting after the reserved ones, in order.
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  /// One token per line; line i (0-based) gets id i + 3.
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      words.push_back(line);
    }
    return from_words(words);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (std::size_t i = kReservedTokens; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw DataError("token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

 private:
  void add(const std::string& w) {
    if (w.empty()) throw DataError("vocabulary: empty token");
    if (!ids_.emplace(w, tokens_.size()).second) throw DataError("vocabulary: duplicate token '" + w + "'");
    tokens_.push_back(w);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// ---------------------------------------------------------------------------
// Temporal proposals

struct TemporalProposal {
  std::size_t start = 0;  // inclusive frame index
  std::size_t end = 0;    // exclusive
  double score = 0.0;

  std::size_t length() const { return end - start; }
};

inline double temporal_iou(const TemporalProposal& a, const TemporalProposal& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  const double inter = hi > lo ? static_cast<double>(hi - lo) : 0.0;
  const double uni = static_cast<double>(a.length() + b.length()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Per-frame sigmoid(frame_feats * clf).
inline Tensor score_actionness(const Tensor& frame_feats, const Tensor& clf) {
  if (frame_feats.rank() != 2 || clf.rank() != 1 || clf.dim(0) != frame_feats.dim(1)) {
    throw ShapeError("score_actionness: frames " + shape_str(frame_feats.dims()) + " vs classifier " +
                     shape_str(clf.dims()));
  }
  const Tensor s = matmul(frame_feats, clf.reshaped({clf.dim(0), 1}));
  return sigmoid(s.reshaped({frame_feats.dim(0)}));
}

struct ProposalOptions {
  std::vector<std::size_t> lengths{8, 16, 32, 64, 128};
  double nms_iou = 0.7;
};

/// Candidate windows sorted by (score desc, start asc, length desc).
inline std::vector<TemporalProposal> candidate_windows(const Tensor& scores, const ProposalOptions& opt = {}) {
  if (scores.rank() != 1) throw ShapeError("candidate_windows: scores must be [T]");
  const std::size_t T = scores.dim(0);
  std::vector<std::size_t> lengths;
  for (std::size_t L : opt.lengths)
    if (L >= 1 && L <= T) lengths.push_back(L);
  lengths.push_back(T);
  std::sort(lengths.begin(), lengths.end());
  lengths.erase(std::unique(lengths.begin(), lengths.end()), lengths.end());

  std::vector<TemporalProposal> out;
  for (std::size_t L : lengths) {
    const std::size_t stride = std::max<std::size_t>(1, L / 4);
    for (std::size_t s = 0; s + L <= T; s += stride) {
      double sum = 0.0;
      for (std::size_t t = s; t < s + L; ++t) sum += scores[t];
      out.push_back({s, s + L, sum / static_cast<double>(L)});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const TemporalProposal& a, const TemporalProposal& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.length() > b.length();
  });
  return out;
}

/// Sliding windows scored by mean actionness, greedy NMS (a candidate is
/// suppressed when its IoU with a kept window exceeds nms_iou), top n kept.
/// If NMS leaves fewer than n windows, suppressed candidates are appended in
/// rank order until n are available.
inline std::vector<TemporalProposal> generate_proposals(const Tensor& scores, std::size_t n = 5,
                                                        const ProposalOptions& opt = {}) {
  if (n < 1) throw ContractError("generate_proposals: n must be >= 1");
  const auto cands = candidate_windows(scores, opt);
  std::vector<TemporalProposal> kept;
  std::vector<bool> used(cands.size(), false);
  for (std::size_t i = 0; i < cands.size() && kept.size() < n; ++i) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (temporal_iou(cands[i], k) > opt.nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) {
      kept.push_back(cands[i]);
      used[i] = true;
    }
  }
  for (std::size_t i = 0; i < cands.size() && kept.size() < n; ++i)
    if (!used[i]) kept.push_back(cands[i]);
  return kept;
}

// ---------------------------------------------------------------------------
// Decoder

struct CaptionModelConfig {
  std::size_t vocab = 16;
  std::size_t embed = 16;
  std::size_t hidden = 32;
  std::size_t feature = 16;
  std::size_t attributes = 8;
  std::size_t attr_proj = 8;
  std::size_t attention = 16;
};

struct AttributeVector {
  Tensor a;  // [A], entries in [0,1]

  void validate() const {
    if (a.rank() != 1) throw ShapeError("attribute vector must be rank 1");
    for (double v : a.data())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("attribute activations must lie in [0,1]");
  }
};

struct CaptionModelParams {
  CaptionModelConfig cfg;
  Tensor embedding;  // [V, E]
  Tensor lstm1_w;    // [E + H + D + P + H, 4H]; rows: word, h2_prev, mean feature, attributes, h1_prev
  Tensor lstm1_b;    // [1, 4H]
  Tensor lstm2_w;    // [H + D + H, 4H]; rows: h1, context, h2_prev
  Tensor lstm2_b;    // [1, 4H]
  Tensor att_h;      // [H, Ha]
  Tensor att_f;      // [D, Ha]
  Tensor att_w;      // [Ha, 1]
  Tensor out_w;      // [H, V]
  Tensor out_b;      // [1, V]
  Tensor attr_proj;  // [A, P]

  ParamRefs refs() {
    return {&embedding, &lstm1_w, &lstm1_b, &lstm2_w, &lstm2_b, &att_h, &att_f, &att_w, &out_w, &out_b, &attr_proj};
  }

  void validate() const {
    const auto& c = cfg;
    const std::size_t H4 = 4 * c.hidden;
    auto need = [](const Tensor& t, const Shape& d, const char* name) {
      if (t.dims() != d) {
        throw ShapeError(std::string("caption params: ") + name + " is " + shape_str(t.dims()) + ", expected " +
                         shape_str(d));
      }
    };
    need(embedding, {c.vocab, c.embed}, "embedding");
    need(lstm1_w, {c.embed + c.hidden + c.feature + c.attr_proj + c.hidden, H4}, "lstm1_w");
    need(lstm1_b, {1, H4}, "lstm1_b");
    need(lstm2_w, {c.hidden + c.feature + c.hidden, H4}, "lstm2_w");
    need(lstm2_b, {1, H4}, "lstm2_b");
    need(att_h, {c.hidden, c.attention}, "att_h");
    need(att_f, {c.feature, c.attention}, "att_f");
    need(att_w, {c.attention, 1}, "att_w");
    need(out_w, {c.hidden, c.vocab}, "out_w");
    need(out_b, {1, c.vocab}, "out_b");
    need(attr_proj, {c.attributes, c.attr_proj}, "attr_proj");
  }

  static CaptionModelParams init(const CaptionModelConfig& c, SplitMix64& rng) {
    CaptionModelParams p;
    p.cfg = c;
    const std::size_t H4 = 4 * c.hidden;
    const std::size_t in1 = c.embed + c.hidden + c.feature + c.attr_proj + c.hidden;
    const std::size_t in2 = c.hidden + c.feature + c.hidden;
    p.embedding = init_uniform({c.vocab, c.embed}, 1, rng);
    p.lstm1_w = init_uniform({in1, H4}, in1, rng);
    p.lstm1_b = Tensor({1, H4});
    p.lstm2_w = init_uniform({in2, H4}, in2, rng);
    p.lstm2_b = Tensor({1, H4});
    p.att_h = init_uniform({c.hidden, c.attention}, c.hidden, rng);
    p.att_f = init_uniform({c.feature, c.attention}, c.feature, rng);
    p.att_w = init_uniform({c.attention, 1}, c.attention, rng);
    p.out_w = init_uniform({c.hidden, c.vocab}, c.hidden, rng);
    p.out_b = Tensor({1, c.vocab});
    p.attr_proj = init_uniform({c.attributes, c.attr_proj}, c.attributes, rng);
    return p;
  }
};

struct CaptionState {
  Tensor h1, c1, h2, c2;  // [1, H]
  Tensor context;         // [1, D], last attended feature
  std::vector<TokenId> history;

  static CaptionState zeros(const CaptionModelConfig& c) {
    return {Tensor({1, c.hidden}), Tensor({1, c.hidden}), Tensor({1, c.hidden}), Tensor({1, c.hidden}),
            Tensor({1, c.feature}), {}};
  }
};

namespace detail {

struct VarState {
  Var h1, c1, h2, c2, context;
};

struct LstmOut {
  Var h, c;
};

// Gate order i, f, g, o.
inline LstmOut lstm_cell(Var x, Var h_prev, Var c_prev, Var w, Var b, std::size_t H) {
  Var z = add(matmul(concat({x, h_prev}, 1), w), b);
  Var i = sigmoid(slice(z, 1, 0, H));
  Var f = sigmoid(slice(z, 1, H, 2 * H));
  Var g = tanh(slice(z, 1, 2 * H, 3 * H));
  Var o = sigmoid(slice(z, 1, 3 * H, 4 * H));
  Var c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

// Inputs for one caption: constant frames, their attention projection, the
// mean-pooled feature and the projected attributes.
struct Encoded {
  Var frames;      // [T, D]
  Var frame_proj;  // [T, Ha]
  Var mean_feat;   // [1, D]
  Var attr;        // [1, P]
};

inline Encoded encode(Tape& tape, const CaptionModelParams& p, Var frames, Var mean_feat, const AttributeVector& attr) {
  if (frames.dims().size() != 2 || frames.dims()[1] != p.cfg.feature) {
    throw ShapeError("caption: frame features " + shape_str(frames.dims()) + " do not match feature width " +
                     std::to_string(p.cfg.feature));
  }
  if (attr.a.rank() != 1 || attr.a.dim(0) != p.cfg.attributes) {
    throw ShapeError("caption: attribute vector " + shape_str(attr.a.dims()) + " does not match " +
                     std::to_string(p.cfg.attributes));
  }
  Var a = tape.constant(attr.a.reshaped({1, p.cfg.attributes}));
  return {frames, matmul(frames, tape.param(p.att_f)), mean_feat, matmul(a, tape.param(p.attr_proj))};
}

struct AttentionOut {
  Var context;  // [1, D]
  Var alpha;    // [T, 1]
};

inline AttentionOut attend(Tape& tape, const CaptionModelParams& p, Var h, Var frames, Var frame_proj) {
  Var hidden = tanh(add(frame_proj, matmul(h, tape.param(p.att_h))));  // [T, Ha]
  Var alpha = softmax(matmul(hidden, tape.param(p.att_w)), 0);         // [T, 1]
  return {matmul(transpose(alpha), frames), alpha};
}

struct StepOut {
  Var logits;  // [1, V]
  VarState state;
};

inline StepOut step(Tape& tape, const CaptionModelParams& p, TokenId prev, const VarState& s, const Encoded& enc) {
  if (prev >= p.cfg.vocab) throw DataError("caption_step: token id " + std::to_string(prev) + " out of range");
  const std::size_t H = p.cfg.hidden;
  Var word = row(tape.param(p.embedding), prev);
  Var x1 = concat({word, s.h2, enc.mean_feat, enc.attr}, 1);
  LstmOut l1 = lstm_cell(x1, s.h1, s.c1, tape.param(p.lstm1_w), tape.param(p.lstm1_b), H);
  AttentionOut att = attend(tape, p, l1.h, enc.frames, enc.frame_proj);
  LstmOut l2 = lstm_cell(concat({l1.h, att.context}, 1), s.h2, s.c2, tape.param(p.lstm2_w), tape.param(p.lstm2_b), H);
  Var logits = add(matmul(l2.h, tape.param(p.out_w)), tape.param(p.out_b));
  return {logits, {l1.h, l1.c, l2.h, l2.c, att.context}};
}

inline VarState initial_state(Tape& tape, const CaptionModelConfig& c) {
  const CaptionState z = CaptionState::zeros(c);
  return {tape.constant(z.h1), tape.constant(z.c1), tape.constant(z.h2), tape.constant(z.c2), tape.constant(z.context)};
}

inline Var mean_feature(Var frames) {
  return reshape(mean_axis(frames, 0), {1, frames.dims()[1]});
}

}  // namespace detail

struct AttentionResult {
  Tensor context;  // [D]
  Tensor alpha;    // [T]
};

/// e_i = w_a . tanh(W_h h + W_f f_i); alpha = softmax(e); context = sum_i alpha_i f_i.
inline AttentionResult temporal_attention(const Tensor& h, const Tensor& frame_feats, const CaptionModelParams& p) {
  if (h.size() != p.cfg.hidden) throw ShapeError("temporal_attention: hidden state size mismatch");
  if (frame_feats.rank() != 2 || frame_feats.dim(1) != p.cfg.feature) {
    throw ShapeError("temporal_attention: frame features " + shape_str(frame_feats.dims()));
  }
  Tape tape;
  Var frames = tape.constant(frame_feats);
  const auto out = detail::attend(tape, p, tape.constant(h.reshaped({1, p.cfg.hidden})), frames,
                                  matmul(frames, tape.param(p.att_f)));
  return {out.context.value().reshaped({p.cfg.feature}), out.alpha.value().reshaped({frame_feats.dim(0)})};
}

struct CaptionStepResult {
  Tensor distribution;  // [V]
  CaptionState state;
};

inline CaptionStepResult caption_step(TokenId prev, const CaptionState& state, const Tensor& mean_feat,
                                      const AttributeVector& attr, const Tensor& frame_feats,
                                      const CaptionModelParams& p) {
  Tape tape;
  const auto enc = detail::encode(tape, p, tape.constant(frame_feats),
                                  tape.constant(mean_feat.reshaped({1, p.cfg.feature})), attr);
  const detail::VarState s{tape.constant(state.h1), tape.constant(state.c1), tape.constant(state.h2),
                           tape.constant(state.c2), tape.constant(state.context)};
  const auto out = detail::step(tape, p, prev, s, enc);
  CaptionStepResult r;
  r.distribution = softmax(out.logits.value(), 1).reshaped({p.cfg.vocab});
  r.state = {out.state.h1.value(), out.state.c1.value(), out.state.h2.value(), out.state.c2.value(),
             out.state.context.value(), state.history};
  r.state.history.push_back(prev);
  return r;
}

enum class DecodeMode { Greedy, Sample };

struct DecodeResult {
  std::vector<TokenId> tokens;  // without BOS/EOS
  bool terminated = false;      // EOS was emitted
};

namespace detail {

inline TokenId argmax_token(const Tensor& dist) {
  TokenId best = 0;
  for (TokenId i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return best;
}

inline TokenId sample_token(const Tensor& dist, SplitMix64& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (TokenId i = 0; i < dist.size(); ++i) {
    cum += dist[i];
    if (u < cum) return i;
  }
  return dist.size() - 1;
}

// Decodes on `tape` and returns per-step log-probabilities of the emitted
// tokens (including EOS when emitted).
inline DecodeResult decode_on(Tape& tape, const CaptionModelParams& p, const Tensor& frame_feats,
                              const AttributeVector& attr, DecodeMode mode, std::size_t max_len, std::uint64_t seed,
                              std::vector<Var>* log_probs) {
  if (max_len < 1) throw ContractError("decode: max_len must be >= 1");
  Var frames = tape.constant(frame_feats);
  const Encoded enc = encode(tape, p, frames, mean_feature(frames), attr);
  VarState s = initial_state(tape, p.cfg);
  SplitMix64 rng(seed);
  DecodeResult r;
  TokenId prev = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    StepOut o = step(tape, p, prev, s, enc);
    const Tensor dist = softmax(o.logits.value(), 1);
    const TokenId next = mode == DecodeMode::Greedy ? argmax_token(dist) : sample_token(dist, rng);
    if (log_probs) log_probs->push_back(pick(log_softmax(o.logits, 1), next));
    s = o.state;
    if (next == kEos) {
      r.terminated = true;
      break;
    }
    r.tokens.push_back(next);
    prev = next;
  }
  return r;
}

}  // namespace detail

/// Greedy takes the argmax (lower id on ties); Sample draws from the
/// distribution with a generator seeded by `seed`.
inline DecodeResult decode(const CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                           DecodeMode mode, std::size_t max_len, std::uint64_t seed = 0) {
  Tape tape;
  return detail::decode_on(tape, p, frame_feats, attr, mode, max_len, seed, nullptr);
}

/// Teacher-forced log p(tokens[t]) per step; appends EOS when `terminated`.
inline std::vector<Var> sequence_log_probs(Tape& tape, const CaptionModelParams& p, const Tensor& frame_feats,
                                           const AttributeVector& attr, const std::vector<TokenId>& tokens,
                                           bool terminated) {
  Var frames = tape.constant(frame_feats);
  const detail::Encoded enc = detail::encode(tape, p, frames, detail::mean_feature(frames), attr);
  detail::VarState s = detail::initial_state(tape, p.cfg);
  std::vector<TokenId> targets = tokens;
  if (terminated) targets.push_back(kEos);
  std::vector<Var> out;
  TokenId prev = kBos;
  for (TokenId target : targets) {
    if (target >= p.cfg.vocab) throw DataError("token id " + std::to_string(target) + " out of range");
    detail::StepOut o = detail::step(tape, p, prev, s, enc);
    out.push_back(pick(log_softmax(o.logits, 1), target));
    s = o.state;
    prev = target;
  }
  return out;
}

inline double sequence_log_prob(const CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                                const DecodeResult& path) {
  Tape tape;
  double total = 0.0;
  for (Var v : sequence_log_probs(tape, p, frame_feats, attr, path.tokens, path.terminated)) total += v.value().item();
  return total;
}

/// Mean over steps of -log p(ref_t); `reference` must end with EOS.
inline Var xent_loss(Tape& tape, const CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                     const std::vector<TokenId>& reference) {
  if (reference.empty() || reference.back() != kEos) {
    throw ContractError("xent_loss: reference must be non-empty and end with EOS");
  }
  const std::vector<TokenId> body(reference.begin(), reference.end() - 1);
  const auto lps = sequence_log_probs(tape, p, frame_feats, attr, body, true);
  return scale(sum_all(concat(lps, 0)), -1.0 / static_cast<double>(lps.size()));
}

struct XentResult {
  double loss = 0.0;
  Gradients grads;
};

inline XentResult xent_loss(const CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                            const std::vector<TokenId>& reference) {
  Tape tape;
  Var loss = xent_loss(tape, p, frame_feats, attr, reference);
  return {loss.value().item(), tape.backward(loss)};
}

struct CaptionSample {
  Tensor frames;  // [T, D]
  AttributeVector attr;
  std::vector<TokenId> reference;  // ends with EOS
};

enum class XentOptimizer { Sgd, Adam };

struct XentTrainOptions {
  std::size_t steps = 300;
  double learning_rate = 0.05;
  XentOptimizer optimizer = XentOptimizer::Adam;
  double clip = 5.0;  // global-norm clip for Adam; <= 0 disables
  // When nonzero, `stop` is polled every this many steps.
  std::size_t check_every = 0;
  std::function<bool()> stop;
};

struct XentTrainResult {
  double final_loss = 0.0;
  std::size_t steps = 0;
};

/// Full-batch training on the mean over samples of the per-sample xent.
inline XentTrainResult train_xent(CaptionModelParams& p, const std::vector<CaptionSample>& samples,
                                  const XentTrainOptions& opt) {
  if (samples.empty()) throw ContractError("train_xent: no samples");
  Adam adam(opt.learning_rate);
  adam.set_clip(opt.clip);
  XentTrainResult r;
  const ParamRefs params = p.refs();
  for (std::size_t step = 0; step < opt.steps; ++step) {
    if (opt.check_every && opt.stop && step % opt.check_every == 0 && opt.stop()) break;
    Tape tape;
    std::vector<Var> losses;
    for (const auto& s : samples) losses.push_back(xent_loss(tape, p, s.frames, s.attr, s.reference));
    Var loss = scale(sum_all(concat(losses, 0)), 1.0 / static_cast<double>(samples.size()));
    r.final_loss = loss.value().item();
    const Gradients g = tape.backward(loss);
    if (opt.optimizer == XentOptimizer::Adam) adam.step(params, g);
    else sgd_step(params, g, opt.learning_rate);
    r.steps = step + 1;
  }
  return r;
}

/// Samples whose greedy decode reproduces the reference exactly, EOS included.
inline std::size_t count_exact(const CaptionModelParams& p, const std::vector<CaptionSample>& samples,
                               std::size_t max_len) {
  std::size_t n = 0;
  for (const auto& s : samples) {
    const auto out = decode(p, s.frames, s.attr, DecodeMode::Greedy, max_len);
    const std::vector<TokenId> ref(s.reference.begin(), s.reference.end() - 1);
    n += out.terminated && out.tokens == ref;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Reward and policy gradient

/// METEOR-shaped surrogate: unigram F-mean (recall-weighted 9:1) times a
/// fragmentation penalty 0.5 * (chunks / matches)^3.
inline double proxy_reward(const std::vector<TokenId>& candidate, const std::vector<TokenId>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<bool> ref_used(reference.size(), false);
  std::vector<std::ptrdiff_t> align(candidate.size(), -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!ref_used[j] && reference[j] == candidate[i]) {
        ref_used[j] = true;
        align[i] = static_cast<std::ptrdiff_t>(j);
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;
  // A chunk is a run of matched candidate positions mapped to consecutive
  // reference positions.
  std::size_t chunks = 0;
  std::ptrdiff_t prev_ref = -2;
  bool in_run = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (align[i] < 0) {
      in_run = false;
      continue;
    }
    if (!in_run || align[i] != prev_ref + 1) ++chunks;
    in_run = true;
    prev_ref = align[i];
  }
  const double P = static_cast<double>(m) / static_cast<double>(candidate.size());
  const double R = static_cast<double>(m) / static_cast<double>(reference.size());
  const double F = P * R / (0.9 * P + 0.1 * R);
  const double frag = static_cast<double>(chunks) / static_cast<double>(m);
  return F * (1.0 - 0.5 * frag * frag * frag);
}

inline std::vector<TokenId> strip_markers(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out;
  for (TokenId t : tokens)
    if (t != kBos && t != kEos) out.push_back(t);
  return out;
}

/// -advantage * sum_t log p(path_t), with the advantage held fixed.
inline Var scst_surrogate(Tape& tape, const CaptionModelParams& p, const Tensor& frame_feats,
                          const AttributeVector& attr, const DecodeResult& path, double advantage) {
  auto lps = sequence_log_probs(tape, p, frame_feats, attr, path.tokens, path.terminated);
  if (lps.empty()) return tape.constant(Tensor::scalar(0.0));
  return scale(sum_all(concat(lps, 0)), -advantage);
}

/// One SGD step on the surrogate with a fixed advantage. A zero advantage is
/// a no-op, so parameters stay bit-identical.
inline void scst_step(CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                      const DecodeResult& path, double advantage, double learning_rate) {
  if (advantage == 0.0) return;
  Tape tape;
  Var loss = scst_surrogate(tape, p, frame_feats, attr, path, advantage);
  sgd_step(p.refs(), tape.backward(loss), learning_rate);
}

struct ScstDiagnostics {
  double advantage = 0.0;
  double sample_reward = 0.0;
  double greedy_reward = 0.0;
  DecodeResult sample;
  DecodeResult greedy;
};

/// One self-critical step: sample y^s (seeded), greedy baseline y^g,
/// A = r(y^s) - r(y^g), SGD on -A * sum_t log p(y^s_t).
inline ScstDiagnostics scst_update(CaptionModelParams& p, const Tensor& frame_feats, const AttributeVector& attr,
                                   const std::vector<TokenId>& reference, double learning_rate, std::uint64_t seed,
                                   std::size_t max_len = 16) {
  const std::vector<TokenId> ref = strip_markers(reference);
  ScstDiagnostics d;
  d.greedy = decode(p, frame_feats, attr, DecodeMode::Greedy, max_len);
  Tape tape;
  std::vector<Var> lps;
  d.sample = detail::decode_on(tape, p, frame_feats, attr, DecodeMode::Sample, max_len, seed, &lps);
  d.sample_reward = proxy_reward(d.sample.tokens, ref);
  d.greedy_reward = proxy_reward(d.greedy.tokens, ref);
  d.advantage = d.sample_reward - d.greedy_reward;
  if (d.advantage == 0.0) return d;
  Var loss = lps.empty() ? tape.constant(Tensor::scalar(0.0)) : scale(sum_all(concat(lps, 0)), -d.advantage);
  sgd_step(p.refs(), tape.backward(loss), learning_rate);
  return d;
}

// ---------------------------------------------------------------------------

struct CaptionedProposal {
  TemporalProposal proposal;
  std::vector<TokenId> tokens;
};

/// Proposals from per-frame actionness, then a greedy caption for each
/// proposal's frame slice.
inline std::vector<CaptionedProposal> dense_caption_pipeline(const Tensor& frame_feats, const AttributeVector& attr,
                                                             const CaptionModelParams& p, const Tensor& actionness_clf,
                                                             std::size_t proposals = 5, std::size_t max_len = 16) {
  const Tensor scores = score_actionness(frame_feats, actionness_clf);
  std::vector<CaptionedProposal> out;
  for (const auto& prop : generate_proposals(scores, proposals)) {
    const Tensor segment = slice(frame_feats, 0, prop.start, prop.end);
    out.push_back({prop, decode(p, segment, attr, DecodeMode::Greedy, max_len).tokens});
  }
  return out;
}

}  // namespace vidkern
