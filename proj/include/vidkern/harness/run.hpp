#pragma once

// Experiment orchestration: loads (or generates) the task's dataset, runs the
// pipeline and returns a JSON report. Everything except `wall_time_s` is a
// deterministic function of the config and seed.

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidkern/captioning.hpp"
#include "vidkern/harness/config.hpp"
#include "vidkern/harness/gradient_suite.hpp"
#include "vidkern/harness/synth.hpp"
#include "vidkern/harness/tensor_file.hpp"
#include "vidkern/lstr.hpp"
#include "vidkern/recognition.hpp"

namespace vidkern {

using json = nlohmann::json;

struct RunResult {
  json report;
  bool numeric_ok = true;
};

namespace detail {

inline Tensor load(const fs::path& p) { return read_tensor(p.string()); }

inline void expect_dims(const Tensor& t, const Shape& want, const fs::path& p) {
  if (t.dims() != want) {
    throw DataError(p.string() + " has shape " + shape_str(t.dims()) + ", expected " + shape_str(want));
  }
}

inline std::vector<std::size_t> load_labels(const fs::path& p, std::size_t n, std::size_t classes) {
  const Tensor t = load(p);
  expect_dims(t, {n}, p);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = t[i];
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(classes)) {
      throw DataError(p.string() + ": label " + std::to_string(v) + " at index " + std::to_string(i) +
                      " is not a class id");
    }
    y[i] = static_cast<std::size_t>(v);
  }
  return y;
}

// Dataset manifest: regenerate whenever the generating inputs change.
inline json dataset_manifest(const ExperimentConfig& cfg, std::uint64_t seed) {
  json c = config_to_json(cfg);
  c.erase("train");
  c.erase("output");
  c.erase("data_dir");
  return {{"seed", seed}, {"config", c}};
}

inline void ensure_dataset(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed) {
  const fs::path dir = root / to_string(cfg.task);
  const fs::path manifest = dir / "manifest.json";
  const json want = dataset_manifest(cfg, seed);
  if (fs::exists(manifest)) {
    try {
      if (read_json(manifest) == want) return;
    } catch (const DataError&) {
    }
  }
  synth_dataset(cfg, root, seed);
  write_text(manifest, want.dump() + "\n");
}

inline std::vector<FeatureSequence> load_stream(const ExperimentConfig& cfg, const StreamSpec& s, const fs::path& p,
                                                std::size_t videos, const StreamModel& model,
                                                const SharedBackbone& bb) {
  const Tensor t = load(p);
  const std::size_t L = cfg.dataset.sequence_length;
  const auto& b = cfg.backbone;
  std::vector<FeatureSequence> seqs(videos, FeatureSequence(Tensor({1, 1})));
  if (s.backbone) {
    expect_dims(t, {videos * L, b.in_channels, b.frames, b.height, b.width}, p);
    parallel_for(videos, [&](std::size_t v) { seqs[v] = extract_sequence(slice(t, 0, v * L, (v + 1) * L), model, bb); });
  } else {
    expect_dims(t, {videos, L, cfg.dataset.feature_dim}, p);
    for (std::size_t v = 0; v < videos; ++v) {
      seqs[v] = FeatureSequence(slice(t, 0, v, v + 1).reshaped({L, cfg.dataset.feature_dim}));
    }
  }
  return seqs;
}

inline json run_recognize(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed) {
  const fs::path dir = root / "recognize";
  const auto& d = cfg.dataset;
  const std::size_t n_train = d.classes * d.train_per_class, n_val = d.classes * d.val_per_class;
  const auto y_train = load_labels(dir / "labels_train.vtf", n_train, d.classes);
  const auto y_val = load_labels(dir / "labels_val.vtf", n_val, d.classes);

  SplitMix64 root_rng(seed);
  SplitMix64 bb_rng = root_rng.fork(tag_of("backbone"));
  const BackboneParams bb_params = BackboneParams::init(cfg.backbone, bb_rng);
  const SharedBackbone bb{&cfg.backbone, &bb_params};

  const std::size_t S = cfg.streams.size();
  std::vector<StreamPrediction> preds(S);
  std::vector<double> train_loss(S);
  std::vector<StreamModel> models(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& spec = cfg.streams[s];
    SplitMix64 r = root_rng.fork(tag_of("model:" + spec.name));
    const std::size_t width = spec.backbone ? cfg.backbone.feature_width() : d.feature_dim;
    models[s] = StreamModel::init(spec.name, spec.quantizer, spec.backbone, width, d.classes, r);
  }
  // Streams in sequence; per-video feature extraction runs in parallel inside.
  for (std::size_t s = 0; s < S; ++s) {
    const auto& spec = cfg.streams[s];
    const auto train = load_stream(cfg, spec, dir / (spec.name + "_train.vtf"), n_train, models[s], bb);
    const auto val = load_stream(cfg, spec, dir / (spec.name + "_val.vtf"), n_val, models[s], bb);
    train_loss[s] = train_stream(models[s], train, y_train, {cfg.train.epochs, cfg.train.learning_rate});
    preds[s] = predict_stream(val, models[s]);
  }
  const FusionWeights w = tune_fusion_weights(preds, y_val);
  const Tensor fused = fuse(preds, w);
  const std::size_t k5 = std::min<std::size_t>(5, d.classes);

  json m;
  m["streams"] = json::array();
  for (std::size_t s = 0; s < S; ++s) {
    m["streams"].push_back({{"name", preds[s].name},
                            {"quantizer", to_string(cfg.streams[s].quantizer)},
                            {"top1", topk_accuracy(preds[s].scores, y_val, 1)},
                            {"top5", topk_accuracy(preds[s].scores, y_val, k5)},
                            {"train_loss", train_loss[s]}});
  }
  m["fusion_weights"] = w.w;
  m["fused"] = {{"top1", topk_accuracy(fused, y_val, 1)}, {"top5", topk_accuracy(fused, y_val, k5)}};
  m["top5_k"] = k5;
  return m;
}

inline std::vector<std::vector<TokenId>> load_references(const fs::path& p, std::size_t videos, std::size_t vocab) {
  const json j = read_json(p);
  if (!j.is_array() || j.size() != videos) {
    throw DataError(p.string() + ": expected an array of " + std::to_string(videos) + " references");
  }
  std::vector<std::vector<TokenId>> refs;
  for (const auto& r : j) {
    if (!r.is_array() || r.empty()) throw DataError(p.string() + ": each reference must be a non-empty array");
    std::vector<TokenId> toks;
    for (const auto& t : r) {
      if (!t.is_number_unsigned() || t.get<std::size_t>() >= vocab) {
        throw DataError(p.string() + ": token ids must be integers below " + std::to_string(vocab));
      }
      toks.push_back(t.get<TokenId>());
    }
    if (toks.back() != kEos) throw DataError(p.string() + ": references must end with EOS");
    refs.push_back(std::move(toks));
  }
  return refs;
}

inline json detokenize(const Vocabulary& vocab, const std::vector<TokenId>& toks) {
  json words = json::array();
  for (TokenId t : toks) words.push_back(vocab.token(t));
  return words;
}

inline json run_caption(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed) {
  const fs::path dir = root / "caption";
  const auto& d = cfg.dataset;
  const Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());
  const Tensor feats = load(dir / "features.vtf");
  expect_dims(feats, {d.videos, d.frames, d.feature_dim}, dir / "features.vtf");
  const Tensor attrs = load(dir / "attributes.vtf");
  expect_dims(attrs, {d.videos, d.attributes}, dir / "attributes.vtf");
  const Tensor actionness = load(dir / "actionness.vtf");
  expect_dims(actionness, {d.videos, d.frames}, dir / "actionness.vtf");
  const auto refs = load_references(dir / "references.json", d.videos, vocab.size());

  const std::size_t V = d.videos, F = d.frames, D = d.feature_dim;
  std::vector<Tensor> video(V);
  std::vector<AttributeVector> attr(V);
  for (std::size_t v = 0; v < V; ++v) {
    video[v] = slice(feats, 0, v, v + 1).reshaped({F, D});
    attr[v] = {slice(attrs, 0, v, v + 1).reshaped({d.attributes})};
    try {
      attr[v].validate();
    } catch (const DataError& e) {
      throw DataError((dir / "attributes.vtf").string() + ": " + e.what());
    }
  }

  SplitMix64 rng = SplitMix64(seed).fork(tag_of("caption-model"));
  CaptionModelConfig mc;
  mc.vocab = vocab.size();
  mc.feature = D;
  mc.attributes = d.attributes;
  CaptionModelParams p = CaptionModelParams::init(mc, rng);
  const std::size_t max_len = d.caption_length + 4;

  std::vector<CaptionSample> samples;
  for (std::size_t v = 0; v < V; ++v) samples.push_back({video[v], attr[v], refs[v]});
  XentTrainOptions xo;
  xo.steps = cfg.train.xent_steps;
  xo.learning_rate = cfg.train.learning_rate;
  const double xent = train_xent(p, samples, xo).final_loss;

  auto greedy_stats = [&](std::size_t& exact) {
    double reward = 0.0;
    exact = 0;
    for (std::size_t v = 0; v < V; ++v) {
      const auto out = decode(p, video[v], attr[v], DecodeMode::Greedy, max_len);
      const auto ref = strip_markers(refs[v]);
      reward += proxy_reward(out.tokens, ref);
      if (out.terminated && out.tokens == ref) ++exact;
    }
    return reward / static_cast<double>(V);
  };
  std::size_t exact_xent = 0, exact_scst = 0;
  const double reward_xent = greedy_stats(exact_xent);
  SplitMix64 scst_rng = SplitMix64(seed).fork(tag_of("scst"));
  double mean_adv = 0.0;
  for (std::size_t step = 0; step < cfg.train.scst_steps; ++step) {
    for (std::size_t v = 0; v < V; ++v) {
      mean_adv += scst_update(p, video[v], attr[v], refs[v], cfg.train.scst_learning_rate, scst_rng.next(), max_len)
                      .advantage;
    }
  }
  if (cfg.train.scst_steps > 0) mean_adv /= static_cast<double>(cfg.train.scst_steps * V);
  const double reward_scst = greedy_stats(exact_scst);

  // Per-frame actionness: logistic regression on all frames.
  Tensor clf({D});
  {
    const Tensor all = feats.reshaped({V * F, D});
    const Tensor targets = actionness.reshaped({V * F, 1});
    Adam a2(0.05);
    for (int step = 0; step < 200; ++step) {
      Tape tape;
      Var w = tape.param(clf);
      Var loss = multilabel_bce(sigmoid(matmul(tape.constant(all), reshape(w, {D, 1}))), targets);
      a2.step({&clf}, tape.backward(loss));
    }
  }
  std::size_t correct = 0;
  for (std::size_t v = 0; v < V; ++v) {
    const Tensor s = score_actionness(video[v], clf);
    for (std::size_t f = 0; f < F; ++f) correct += (s[f] >= 0.5) == (actionness.at({v, f}) >= 0.5);
  }

  std::vector<json> per_video(V);
  parallel_for(V, [&](std::size_t v) {
    json props = json::array();
    for (const auto& cp : dense_caption_pipeline(video[v], attr[v], p, clf, 5, max_len)) {
      props.push_back({{"start", cp.proposal.start},
                       {"end", cp.proposal.end},
                       {"score", cp.proposal.score},
                       {"tokens", detokenize(vocab, cp.tokens)}});
    }
    per_video[v] = {{"video", v}, {"reference", detokenize(vocab, strip_markers(refs[v]))}, {"proposals", props}};
  });

  json m;
  m["xent_final_loss"] = xent;
  m["mean_reward_after_xent"] = reward_xent;
  m["mean_reward_after_scst"] = reward_scst;
  m["exact_reconstructions_after_xent"] = exact_xent;
  m["exact_reconstructions_after_scst"] = exact_scst;
  m["mean_scst_advantage"] = mean_adv;
  m["actionness_frame_accuracy"] = static_cast<double>(correct) / static_cast<double>(V * F);
  m["videos"] = per_video;
  return m;
}

struct LocalizeWindow {
  std::vector<BoxProposal> proposals;
  std::vector<std::size_t> frames;  // global frame id per proposal
};

inline json run_localize(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed) {
  const fs::path dir = root / "localize";
  const auto& d = cfg.dataset;
  const std::size_t N = d.windows * kClipsPerWindow;
  const Shape clip_shape{N, d.channels, d.clip_frames, d.clip_height, d.clip_width};
  const Tensor rgb = load(dir / "rgb.vtf");
  expect_dims(rgb, clip_shape, dir / "rgb.vtf");
  const Tensor flow = load(dir / "flow.vtf");
  expect_dims(flow, clip_shape, dir / "flow.vtf");

  std::vector<LocalizeWindow> windows(d.windows);
  {
    const json pj = read_json(dir / "proposals.json");
    if (!pj.is_array()) throw DataError((dir / "proposals.json").string() + ": expected an array");
    for (const auto& e : pj) {
      const std::string where = (dir / "proposals.json").string();
      if (!e.is_object() || !e.contains("window") || !e.contains("clip") || !e.contains("box") ||
          !e.contains("score") || !e["window"].is_number_unsigned() || !e["clip"].is_number_unsigned() ||
          !e["score"].is_number()) {
        throw DataError(where + ": proposals need integer window/clip, box and numeric score");
      }
      const auto w = e["window"].get<std::size_t>(), c = e["clip"].get<std::size_t>();
      if (w >= d.windows || c >= kClipsPerWindow) throw DataError(where + ": window or clip index out of range");
      windows[w].proposals.push_back({c, box_from_json(e["box"], where), e["score"].get<double>(), {}});
      windows[w].frames.push_back(w * kClipsPerWindow + c);
    }
  }
  std::vector<FrameGroundTruth> gt;
  {
    const std::string where = (dir / "groundtruth.json").string();
    const json gj = read_json(dir / "groundtruth.json");
    if (!gj.is_array()) throw DataError(where + ": expected an array");
    for (const auto& e : gj) {
      if (!e.is_object() || !e.contains("frame") || !e.contains("class") || !e.contains("box") ||
          !e["frame"].is_number_unsigned() || !e["class"].is_number_unsigned()) {
        throw DataError(where + ": entries need integer frame and class, and a box");
      }
      const auto f = e["frame"].get<std::size_t>(), k = e["class"].get<std::size_t>();
      if (f >= N || k >= d.action_classes) throw DataError(where + ": frame or class out of range");
      gt.push_back({f, k, box_from_json(e["box"], where)});
    }
  }

  LSTRConfig lc;
  lc.channels = d.channels;
  lc.pool = {std::min<std::size_t>(2, d.clip_frames), 2, 2};
  lc.classes = d.action_classes;
  lc.lambda = cfg.train.lambda;

  std::vector<std::size_t> train_w, eval_w;
  for (std::size_t w = 0; w < d.windows; ++w) (w % 2 == 0 ? train_w : eval_w).push_back(w);
  if (eval_w.empty()) eval_w = train_w;

  // Proposal targets: one-hot class of the best-overlapping ground truth in
  // the same frame at IoU >= 0.5, all zeros otherwise.
  auto targets_for = [&](const LocalizeWindow& win) {
    Tensor t({std::max<std::size_t>(1, win.proposals.size()), d.action_classes});
    for (std::size_t i = 0; i < win.proposals.size(); ++i) {
      double best = 0.5;
      std::ptrdiff_t cls = -1;
      for (const auto& g : gt) {
        if (g.frame != win.frames[i]) continue;
        const double iou = iou_2d(g.box, win.proposals[i].box);
        if (iou >= best) {
          best = iou;
          cls = static_cast<std::ptrdiff_t>(g.cls);
        }
      }
      if (cls >= 0) t.at({i, static_cast<std::size_t>(cls)}) = 1.0;
    }
    return t;
  };

  auto run_stream = [&](const Tensor& maps, const std::string& name) {
    SplitMix64 r = SplitMix64(seed).fork(tag_of("lstr:" + name));
    LSTRParams params = LSTRParams::init(lc, r);
    std::vector<Tensor> hidden(d.windows);
    parallel_for(d.windows, [&](std::size_t w) {
      if (windows[w].proposals.empty()) return;
      std::vector<ClipFeatureMap> clips;
      for (std::size_t c = 0; c < kClipsPerWindow; ++c) {
        const std::size_t n = w * kClipsPerWindow + c;
        clips.push_back({c, slice(maps, 0, n, n + 1).reshaped({d.channels, d.clip_frames, d.clip_height, d.clip_width})});
      }
      auto props = windows[w].proposals;
      Tape tape;
      hidden[w] = lstr_forward(tape, clips, props, lc, params).hidden.value();
    });
    // Only the classifier is fitted; the GCN features are fixed.
    Adam adam(cfg.train.learning_rate);
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
      Tape tape;
      std::vector<Var> losses;
      for (std::size_t w : train_w) {
        if (windows[w].proposals.empty()) continue;
        Var s = sigmoid(add(matmul(tape.constant(hidden[w]), tape.param(params.classifier)), tape.param(params.bias)));
        losses.push_back(multilabel_bce(s, targets_for(windows[w])));
      }
      if (losses.empty()) break;
      Var loss = sum_all(concat(losses, 0));
      adam.step({&params.classifier, &params.bias}, tape.backward(loss));
    }
    std::vector<Tensor> scores(d.windows);
    for (std::size_t w : eval_w) {
      if (windows[w].proposals.empty()) continue;
      scores[w] = sigmoid(add(matmul(hidden[w], params.classifier), params.bias));
    }
    return scores;
  };

  const auto rgb_scores = run_stream(rgb, "rgb");
  const auto flow_scores = run_stream(flow, "flow");

  std::vector<FrameGroundTruth> eval_gt;
  for (const auto& g : gt)
    if (std::find(eval_w.begin(), eval_w.end(), g.frame / kClipsPerWindow) != eval_w.end()) eval_gt.push_back(g);
  auto detections = [&](const std::vector<Tensor>& scores) {
    std::vector<FrameDetection> dets;
    for (std::size_t w : eval_w) {
      if (windows[w].proposals.empty()) continue;
      for (std::size_t i = 0; i < windows[w].proposals.size(); ++i)
        for (std::size_t k = 0; k < d.action_classes; ++k) {
          dets.push_back({windows[w].frames[i], k, windows[w].proposals[i].box, scores[w].at({i, k})});
        }
    }
    return dets;
  };
  std::vector<Tensor> fused(d.windows);
  for (std::size_t w : eval_w)
    if (!windows[w].proposals.empty()) fused[w] = two_stream_average(rgb_scores[w], flow_scores[w]);

  json m;
  m["frame_map"] = {{"rgb", frame_map(detections(rgb_scores), eval_gt)},
                    {"flow", frame_map(detections(flow_scores), eval_gt)},
                    {"two_stream", frame_map(detections(fused), eval_gt)}};
  m["train_windows"] = train_w;
  m["eval_windows"] = eval_w;
  m["eval_ground_truth"] = eval_gt.size();
  m["lambda"] = lc.lambda;
  return m;
}

inline json run_gradcheck(std::uint64_t seed, bool& ok) {
  json m;
  m["checks"] = json::array();
  double worst = 0.0;
  ok = true;
  for (const auto& r : run_gradient_suite(seed)) {
    m["checks"].push_back(
        {{"name", r.name}, {"coordinates", r.checked}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    worst = std::max(worst, r.max_rel_error);
    ok = ok && r.passed;
  }
  m["max_rel_error"] = worst;
  m["passed"] = ok;
  return m;
}

}  // namespace detail

/// Writes the dataset for the config's task under cfg.data_dir.
inline fs::path generate(const ExperimentConfig& cfg, std::uint64_t seed) {
  const fs::path root(cfg.data_dir);
  if (cfg.task != Task::Gradcheck) detail::ensure_dataset(cfg, root, seed);
  return root / to_string(cfg.task);
}

inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root(cfg.data_dir);
  RunResult res;
  json metrics;
  switch (cfg.task) {
    case Task::Recognize:
      detail::ensure_dataset(cfg, root, seed);
      metrics = detail::run_recognize(cfg, root, seed);
      break;
    case Task::Caption:
      detail::ensure_dataset(cfg, root, seed);
      metrics = detail::run_caption(cfg, root, seed);
      break;
    case Task::Localize:
      detail::ensure_dataset(cfg, root, seed);
      metrics = detail::run_localize(cfg, root, seed);
      break;
    case Task::Gradcheck: metrics = detail::run_gradcheck(seed, res.numeric_ok); break;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ExperimentConfig echo = cfg;
  echo.seed = seed;
  res.report = {{"task", to_string(cfg.task)},
                {"seed", seed},
                {"config", config_to_json(echo)},
                {"metrics", metrics},
                {"wall_time_s", secs}};
  return res;
}

inline void write_report(const json& report, const fs::path& out_dir) {
  detail::ensure_dir(out_dir);
  detail::write_text(out_dir / "report.json", report.dump(2) + "\n");
}

}  // namespace vidkern
