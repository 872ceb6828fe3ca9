#pragma once

// Experiment configuration loaded from JSON. Unknown keys are rejected so a
// misspelled field cannot silently fall back to its default.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidkern/backbone.hpp"
#include "vidkern/quantization.hpp"

namespace vidkern {

enum class Task { Recognize, Caption, Localize, Gradcheck };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::Recognize: return "recognize";
    case Task::Caption: return "caption";
    case Task::Localize: return "localize";
    case Task::Gradcheck: return "gradcheck";
  }
  return "?";
}

inline Task task_from_string(const std::string& s) {
  if (s == "recognize") return Task::Recognize;
  if (s == "caption") return Task::Caption;
  if (s == "localize") return Task::Localize;
  if (s == "gradcheck") return Task::Gradcheck;
  throw ConfigError("unknown task '" + s + "' (expected recognize, caption, localize or gradcheck)");
}

struct StreamSpec {
  std::string name;
  Quantizer quantizer = Quantizer::AP;
  bool backbone = false;  // raw clips through the shared backbone
  double noise = 1.0;     // generator noise level for this stream
};

struct DatasetSpec {
  // recognize
  std::size_t classes = 5;
  std::size_t train_per_class = 8;
  std::size_t val_per_class = 8;
  std::size_t sequence_length = 4;
  std::size_t feature_dim = 16;
  // caption
  std::size_t videos = 4;
  std::size_t frames = 48;
  std::size_t vocab_words = 12;
  std::size_t caption_length = 8;
  std::size_t attributes = 8;
  // localize
  std::size_t windows = 4;
  std::size_t actors_per_clip = 2;
  std::size_t channels = 8;
  std::size_t clip_frames = 4;
  std::size_t clip_height = 6;
  std::size_t clip_width = 6;
  std::size_t action_classes = 3;
};

struct TrainSpec {
  std::size_t epochs = 150;
  double learning_rate = 0.05;
  std::size_t xent_steps = 300;
  std::size_t scst_steps = 10;
  double scst_learning_rate = 1e-3;
  double lambda = 0.5;
};

struct ExperimentConfig {
  Task task = Task::Recognize;
  std::optional<std::uint64_t> seed;
  std::vector<StreamSpec> streams;
  BackboneConfig backbone = BackboneConfig::toy();
  DatasetSpec dataset;
  TrainSpec train;
  std::string data_dir = "data";
  std::string output = "out";

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("config has no seed; set \"seed\" or pass --seed");
    return *seed;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("dataset.") + name + " must be >= 1");
    };
    const auto& d = dataset;
    positive(d.classes, "classes");
    positive(d.train_per_class, "train_per_class");
    positive(d.val_per_class, "val_per_class");
    positive(d.sequence_length, "sequence_length");
    positive(d.feature_dim, "feature_dim");
    positive(d.videos, "videos");
    positive(d.frames, "frames");
    positive(d.vocab_words, "vocab_words");
    positive(d.caption_length, "caption_length");
    positive(d.attributes, "attributes");
    positive(d.windows, "windows");
    positive(d.actors_per_clip, "actors_per_clip");
    positive(d.channels, "channels");
    positive(d.clip_frames, "clip_frames");
    positive(d.clip_height, "clip_height");
    positive(d.clip_width, "clip_width");
    positive(d.action_classes, "action_classes");
    if (task == Task::Recognize && streams.empty()) throw ConfigError("recognize needs at least one stream");
    std::set<std::string> names;
    for (const auto& s : streams) {
      if (s.name.empty()) throw ConfigError("stream name must be non-empty");
      if (!names.insert(s.name).second) throw ConfigError("duplicate stream name '" + s.name + "'");
      if (!(s.noise >= 0.0)) throw ConfigError("stream '" + s.name + "' noise must be >= 0");
    }
    if (train.epochs == 0 || train.xent_steps == 0) throw ConfigError("training step counts must be >= 1");
    if (!(train.learning_rate > 0.0) || !(train.scst_learning_rate > 0.0)) {
      throw ConfigError("learning rates must be positive");
    }
    if (!(train.lambda >= 0.0 && train.lambda <= 1.0)) throw ConfigError("train.lambda must lie in [0,1]");
    backbone.validate();
  }
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline void read_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + " must be a nonnegative integer");
  out = v.get<std::size_t>();
}

inline BackboneConfig parse_backbone(const json& j) {
  check_keys(j, {"in_channels", "frames", "height", "width", "bottleneck_divisor", "stages"}, "backbone");
  BackboneConfig c = BackboneConfig::toy();
  read_count(j, "in_channels", c.in_channels, "backbone");
  read_count(j, "frames", c.frames, "backbone");
  read_count(j, "height", c.height, "backbone");
  read_count(j, "width", c.width, "backbone");
  read_count(j, "bottleneck_divisor", c.bottleneck_divisor, "backbone");
  if (j.contains("stages")) {
    if (!j.at("stages").is_array()) throw ConfigError("backbone.stages must be an array");
    c.stages.clear();
    for (const auto& s : j.at("stages")) {
      check_keys(s, {"width", "blocks", "kind", "lgd_variant"}, "backbone.stages[]");
      StageConfig sc;
      read_count(s, "width", sc.width, "stage");
      read_count(s, "blocks", sc.blocks, "stage");
      std::string kind = to_string(sc.kind);
      read_field(s, "kind", kind, "stage");
      sc.kind = block_kind_from_string(kind);
      std::string lv = "A";
      read_field(s, "lgd_variant", lv, "stage");
      if (lv == "A") sc.lgd_variant = P3DVariant::A;
      else if (lv == "B") sc.lgd_variant = P3DVariant::B;
      else if (lv == "C") sc.lgd_variant = P3DVariant::C;
      else throw ConfigError("stage.lgd_variant must be A, B or C");
      c.stages.push_back(sc);
    }
  }
  return c;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read_count;
  using detail::read_field;
  detail::check_keys(j, {"task", "seed", "streams", "backbone", "dataset", "train", "data_dir", "output"}, "config");
  ExperimentConfig c;
  if (j.contains("task")) {
    std::string t;
    read_field(j, "task", t, "config");
    c.task = task_from_string(t);
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("config.seed must be a nonnegative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("streams")) {
    if (!j.at("streams").is_array()) throw ConfigError("config.streams must be an array");
    for (const auto& s : j.at("streams")) {
      detail::check_keys(s, {"name", "quantizer", "backbone", "noise"}, "streams[]");
      StreamSpec spec;
      read_field(s, "name", spec.name, "stream");
      std::string q = "AP";
      read_field(s, "quantizer", q, "stream");
      spec.quantizer = quantizer_from_string(q);
      read_field(s, "backbone", spec.backbone, "stream");
      read_field(s, "noise", spec.noise, "stream");
      c.streams.push_back(spec);
    }
  }
  if (j.contains("backbone")) c.backbone = detail::parse_backbone(j.at("backbone"));
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d,
                       {"classes", "train_per_class", "val_per_class", "sequence_length", "feature_dim", "videos",
                        "frames", "vocab_words", "caption_length", "attributes", "windows", "actors_per_clip",
                        "channels", "clip_frames", "clip_height", "clip_width", "action_classes"},
                       "dataset");
    auto& o = c.dataset;
    read_count(d, "classes", o.classes, "dataset");
    read_count(d, "train_per_class", o.train_per_class, "dataset");
    read_count(d, "val_per_class", o.val_per_class, "dataset");
    read_count(d, "sequence_length", o.sequence_length, "dataset");
    read_count(d, "feature_dim", o.feature_dim, "dataset");
    read_count(d, "videos", o.videos, "dataset");
    read_count(d, "frames", o.frames, "dataset");
    read_count(d, "vocab_words", o.vocab_words, "dataset");
    read_count(d, "caption_length", o.caption_length, "dataset");
    read_count(d, "attributes", o.attributes, "dataset");
    read_count(d, "windows", o.windows, "dataset");
    read_count(d, "actors_per_clip", o.actors_per_clip, "dataset");
    read_count(d, "channels", o.channels, "dataset");
    read_count(d, "clip_frames", o.clip_frames, "dataset");
    read_count(d, "clip_height", o.clip_height, "dataset");
    read_count(d, "clip_width", o.clip_width, "dataset");
    read_count(d, "action_classes", o.action_classes, "dataset");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, {"epochs", "learning_rate", "xent_steps", "scst_steps", "scst_learning_rate", "lambda"},
                       "train");
    read_count(t, "epochs", c.train.epochs, "train");
    read_field(t, "learning_rate", c.train.learning_rate, "train");
    read_count(t, "xent_steps", c.train.xent_steps, "train");
    read_count(t, "scst_steps", c.train.scst_steps, "train");
    read_field(t, "scst_learning_rate", c.train.scst_learning_rate, "train");
    read_field(t, "lambda", c.train.lambda, "train");
  }
  read_field(j, "data_dir", c.data_dir, "config");
  read_field(j, "output", c.output, "config");
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Echo of the effective configuration, included in every report.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  if (c.seed) j["seed"] = *c.seed;
  j["streams"] = nlohmann::json::array();
  for (const auto& s : c.streams) {
    j["streams"].push_back({{"name", s.name}, {"quantizer", to_string(s.quantizer)}, {"backbone", s.backbone},
                            {"noise", s.noise}});
  }
  auto& b = j["backbone"];
  b["in_channels"] = c.backbone.in_channels;
  b["frames"] = c.backbone.frames;
  b["height"] = c.backbone.height;
  b["width"] = c.backbone.width;
  b["bottleneck_divisor"] = c.backbone.bottleneck_divisor;
  b["stages"] = nlohmann::json::array();
  for (const auto& s : c.backbone.stages) {
    const char* lv = s.lgd_variant == P3DVariant::A ? "A" : s.lgd_variant == P3DVariant::B ? "B" : "C";
    b["stages"].push_back({{"width", s.width}, {"blocks", s.blocks}, {"kind", to_string(s.kind)}, {"lgd_variant", lv}});
  }
  const auto& d = c.dataset;
  j["dataset"] = {{"classes", d.classes},
                  {"train_per_class", d.train_per_class},
                  {"val_per_class", d.val_per_class},
                  {"sequence_length", d.sequence_length},
                  {"feature_dim", d.feature_dim},
                  {"videos", d.videos},
                  {"frames", d.frames},
                  {"vocab_words", d.vocab_words},
                  {"caption_length", d.caption_length},
                  {"attributes", d.attributes},
                  {"windows", d.windows},
                  {"actors_per_clip", d.actors_per_clip},
                  {"channels", d.channels},
                  {"clip_frames", d.clip_frames},
                  {"clip_height", d.clip_height},
                  {"clip_width", d.clip_width},
                  {"action_classes", d.action_classes}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},         {"learning_rate", t.learning_rate},
                {"xent_steps", t.xent_steps}, {"scst_steps", t.scst_steps},
                {"scst_learning_rate", t.scst_learning_rate}, {"lambda", t.lambda}};
  j["data_dir"] = c.data_dir;
  j["output"] = c.output;
  return j;
}

}  // namespace vidkern
