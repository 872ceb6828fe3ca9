#pragma once

// Seeded synthetic datasets for the three pipelines. Every file is a pure
// function of the config and seed.
//
//   recognize/  labels_{train,val}.vtf [N]
//               <stream>_{train,val}.vtf  [N,L,D] features, or [N*L,C,T,H,W] clips
//   caption/    features.vtf [V,F,D], attributes.vtf [V,A], actionness.vtf [V,F],
//               references.json, vocab.txt
//   localize/   rgb.vtf, flow.vtf [W*8,C,T,H,W], proposals.json, groundtruth.json

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidkern/captioning.hpp"
#include "vidkern/harness/config.hpp"
#include "vidkern/harness/tensor_file.hpp"
#include "vidkern/lstr.hpp"

namespace vidkern {

namespace fs = std::filesystem;

namespace detail {

inline std::uint64_t tag_of(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create directory " + p.string() + ": " + ec.message());
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// Each class appears floor(N/K) or ceil(N/K) times, in seeded random order.
inline std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes, SplitMix64& rng) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % classes;
  for (std::size_t i = n; i-- > 1;) std::swap(y[i], y[rng.below(i + 1)]);
  return y;
}

inline Tensor labels_tensor(const std::vector<std::size_t>& y) {
  Tensor t({y.size()});
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = static_cast<double>(y[i]);
  return t;
}

inline Box random_box(SplitMix64& rng, double min_side, double max_side) {
  const double w = rng.uniform(min_side, max_side);
  const double h = rng.uniform(min_side, max_side);
  const double x1 = rng.uniform(0.0, 1.0 - w);
  const double y1 = rng.uniform(0.0, 1.0 - h);
  return {x1, y1, x1 + w, y1 + h};
}

inline Box jitter_box(const Box& b, double amount, SplitMix64& rng) {
  Box j{std::clamp(b.x1 + rng.uniform(-amount, amount), 0.0, 1.0),
        std::clamp(b.y1 + rng.uniform(-amount, amount), 0.0, 1.0),
        std::clamp(b.x2 + rng.uniform(-amount, amount), 0.0, 1.0),
        std::clamp(b.y2 + rng.uniform(-amount, amount), 0.0, 1.0)};
  if (j.x2 - j.x1 < 0.05 || j.y2 - j.y1 < 0.05) return b;
  return j;
}

inline nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw DataError(where + ": box must be [x1,y1,x2,y2]");
  Box b;
  try {
    b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw DataError(where + ": box coordinates must be numbers");
  }
  try {
    b.validate();
  } catch (const ContractError& e) {
    throw DataError(where + ": " + e.what());
  }
  return b;
}

// Planted class signal: unit-variance mean vectors per class, plus noise.
inline void synth_recognize(const ExperimentConfig& cfg, const fs::path& dir, std::uint64_t seed) {
  const auto& d = cfg.dataset;
  ensure_dir(dir);
  SplitMix64 root(seed);
  SplitMix64 label_rng = root.fork(tag_of("labels"));
  const auto y_train = balanced_labels(d.classes * d.train_per_class, d.classes, label_rng);
  const auto y_val = balanced_labels(d.classes * d.val_per_class, d.classes, label_rng);
  write_tensor((dir / "labels_train.vtf").string(), labels_tensor(y_train));
  write_tensor((dir / "labels_val.vtf").string(), labels_tensor(y_val));

  const auto& bb = cfg.backbone;
  for (const auto& s : cfg.streams) {
    SplitMix64 rng = root.fork(tag_of("stream:" + s.name));
    const std::size_t width = s.backbone ? bb.in_channels : d.feature_dim;
    Tensor means = Tensor::normal({d.classes, width}, rng, 1.0);
    for (const auto& [split, labels] : {std::pair{"train", &y_train}, std::pair{"val", &y_val}}) {
      const std::size_t N = labels->size(), L = d.sequence_length;
      Tensor out = s.backbone ? Tensor({N * L, bb.in_channels, bb.frames, bb.height, bb.width})
                              : Tensor({N, L, d.feature_dim});
      const std::size_t per_row = out.size() / (N * L);  // elements per clip or per time step
      const std::size_t spatial = s.backbone ? bb.frames * bb.height * bb.width : 1;
      for (std::size_t v = 0; v < N; ++v)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t e = 0; e < per_row; ++e) {
            const std::size_t ch = e / spatial;
            out[(v * L + l) * per_row + e] = means.at({(*labels)[v], ch}) + s.noise * rng.normal(0.0, 1.0);
          }
      write_tensor((dir / (s.name + "_" + split + ".vtf")).string(), out);
    }
  }
}

// Each video has a topic k = v mod classes. Frames inside the event segment
// carry the topic direction and a shared actionness direction; references
// are a fixed token sequence per topic.
inline void synth_caption(const ExperimentConfig& cfg, const fs::path& dir, std::uint64_t seed) {
  const auto& d = cfg.dataset;
  ensure_dir(dir);
  SplitMix64 rng = SplitMix64(seed).fork(tag_of("caption"));
  const std::size_t V = d.videos, F = d.frames, D = d.feature_dim, K = d.classes;
  Tensor topic = Tensor::normal({K, D}, rng, 1.0);
  Tensor action = Tensor::normal({D}, rng, 1.0);
  Tensor topic_attr = Tensor::uniform({K, d.attributes}, rng, 0.0, 1.0);
  std::vector<std::vector<TokenId>> topic_ref(K);
  for (auto& ref : topic_ref) {
    for (std::size_t i = 0; i < d.caption_length; ++i) ref.push_back(kReservedTokens + rng.below(d.vocab_words));
    ref.push_back(kEos);
  }

  Tensor feats({V, F, D});
  Tensor attrs({V, d.attributes});
  Tensor actionness({V, F});
  nlohmann::json refs = nlohmann::json::array();
  for (std::size_t v = 0; v < V; ++v) {
    const std::size_t k = v % K;
    const std::size_t len = std::max<std::size_t>(1, F / 4 + rng.below(std::max<std::size_t>(1, F / 4)));
    const std::size_t start = rng.below(F - len + 1);
    for (std::size_t f = 0; f < F; ++f) {
      const bool inside = f >= start && f < start + len;
      actionness.at({v, f}) = inside ? 1.0 : 0.0;
      for (std::size_t c = 0; c < D; ++c) {
        double x = 0.3 * rng.normal(0.0, 1.0);
        if (inside) x += topic.at({k, c}) + action[c];
        feats.at({v, f, c}) = x;
      }
    }
    for (std::size_t a = 0; a < d.attributes; ++a) {
      attrs.at({v, a}) = std::clamp(topic_attr.at({k, a}) + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    }
    refs.push_back(topic_ref[k]);
  }
  write_tensor((dir / "features.vtf").string(), feats);
  write_tensor((dir / "attributes.vtf").string(), attrs);
  write_tensor((dir / "actionness.vtf").string(), actionness);
  write_text(dir / "references.json", refs.dump() + "\n");
  std::vector<std::string> words;
  for (std::size_t i = 0; i < d.vocab_words; ++i) words.push_back("w" + std::to_string(i));
  Vocabulary::from_words(words).save((dir / "vocab.txt").string());
}

// Actors add a class-specific channel pattern inside their box on every frame
// of their clip; proposals are jittered ground-truth boxes plus one random
// distractor per clip.
inline void synth_localize(const ExperimentConfig& cfg, const fs::path& dir, std::uint64_t seed) {
  const auto& d = cfg.dataset;
  ensure_dir(dir);
  SplitMix64 rng = SplitMix64(seed).fork(tag_of("localize"));
  const std::size_t N = d.windows * kClipsPerWindow, C = d.channels, T = d.clip_frames, H = d.clip_height,
                    W = d.clip_width, K = d.action_classes;
  Tensor rgb_pattern = Tensor::uniform({K, C}, rng, 0.0, 2.0);
  Tensor flow_pattern = Tensor::uniform({K, C}, rng, 0.0, 2.0);
  Tensor rgb({N, C, T, H, W});
  Tensor flow({N, C, T, H, W});
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    rgb[i] = 0.3 * std::abs(rng.normal(0.0, 1.0));
    flow[i] = 0.5 * std::abs(rng.normal(0.0, 1.0));
  }
  nlohmann::json proposals = nlohmann::json::array();
  nlohmann::json gt = nlohmann::json::array();
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t window = n / kClipsPerWindow, clip = n % kClipsPerWindow;
    for (std::size_t a = 0; a < d.actors_per_clip; ++a) {
      const Box box = random_box(rng, 0.3, 0.6);
      const std::size_t cls = rng.below(K);
      const std::size_t y0 = static_cast<std::size_t>(std::floor(box.y1 * static_cast<double>(H)));
      const std::size_t y1 = std::min(H, static_cast<std::size_t>(std::ceil(box.y2 * static_cast<double>(H))));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(box.x1 * static_cast<double>(W)));
      const std::size_t x1 = std::min(W, static_cast<std::size_t>(std::ceil(box.x2 * static_cast<double>(W))));
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
              rgb.at({n, c, t, y, x}) += rgb_pattern.at({cls, c});
              flow.at({n, c, t, y, x}) += flow_pattern.at({cls, c});
            }
      gt.push_back({{"frame", n}, {"class", cls}, {"box", box_json(box)}});
      proposals.push_back({{"window", window},
                           {"clip", clip},
                           {"box", box_json(jitter_box(box, 0.05, rng))},
                           {"score", rng.uniform(0.6, 1.0)}});
    }
    proposals.push_back({{"window", window},
                         {"clip", clip},
                         {"box", box_json(random_box(rng, 0.2, 0.5))},
                         {"score", rng.uniform(0.1, 0.5)}});
  }
  write_tensor((dir / "rgb.vtf").string(), rgb);
  write_tensor((dir / "flow.vtf").string(), flow);
  write_text(dir / "proposals.json", proposals.dump() + "\n");
  write_text(dir / "groundtruth.json", gt.dump() + "\n");
}

}  // namespace detail

/// Writes the dataset for cfg.task under `root`/<task>/. Gradcheck needs no data.
inline void synth_dataset(const ExperimentConfig& cfg, const fs::path& root, std::uint64_t seed) {
  switch (cfg.task) {
    case Task::Recognize: detail::synth_recognize(cfg, root / "recognize", seed); break;
    case Task::Caption: detail::synth_caption(cfg, root / "caption", seed); break;
    case Task::Localize: detail::synth_localize(cfg, root / "localize", seed); break;
    case Task::Gradcheck: break;
  }
}

}  // namespace vidkern
