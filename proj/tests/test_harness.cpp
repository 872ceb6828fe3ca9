#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vidkern/harness/gradient_suite.hpp"
#include "vidkern/harness/run.hpp"

using namespace vidkern;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vidkern_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small(Task task, const fs::path& dir) {
  ExperimentConfig c;
  c.task = task;
  c.seed = 5;
  c.data_dir = (dir / "data").string();
  c.output = (dir / "out").string();
  c.dataset.videos = 3;
  c.dataset.frames = 24;
  c.dataset.classes = 3;
  c.train.xent_steps = 40;
  c.train.scst_steps = 2;
  c.train.epochs = 40;
  c.dataset.windows = 2;
  if (task == Task::Recognize) {
    c.streams = {{"a", Quantizer::AP, false, 1.0}, {"b", Quantizer::TCP, false, 2.0}};
    c.dataset.train_per_class = 4;
    c.dataset.val_per_class = 4;
  }
  return c;
}

json without_time(json r) {
  r.erase("wall_time_s");
  return r;
}

}  // namespace

TEST(Config, ParsesSampleShape) {
  const auto c = parse_config(json::parse(R"({"task": "recognize", "seed": 3,
    "streams": [{"name": "rgb", "quantizer": "TCP", "noise": 0.5}],
    "dataset": {"classes": 4}, "train": {"epochs": 10}})"));
  EXPECT_EQ(c.task, Task::Recognize);
  EXPECT_EQ(c.require_seed(), 3u);
  ASSERT_EQ(c.streams.size(), 1u);
  EXPECT_EQ(c.streams[0].quantizer, Quantizer::TCP);
  EXPECT_EQ(c.dataset.classes, 4u);
  EXPECT_EQ(c.train.epochs, 10u);
  const auto again = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config(json::parse(R"({"task": "dance"})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "caption", "colour": 1})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "caption", "dataset": {"frames": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "caption", "dataset": {"frames": "many"}})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "recognize", "streams": []})")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"([1, 2])")), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "caption"})")).require_seed(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/vidkern.json"), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"task": "gradcheck", "backbone": {"stages": []}})")), ConfigError);
}

TEST(Synth, BalancedLabels) {
  SplitMix64 rng(1);
  const auto y = detail::balanced_labels(12, 4, rng);
  std::vector<int> counts(4, 0);
  for (auto l : y) ++counts[l];
  EXPECT_EQ(counts, (std::vector<int>{3, 3, 3, 3}));
}

TEST(Synth, DeterministicPerSeed) {
  const fs::path dir = scratch("synth");
  for (Task t : {Task::Recognize, Task::Caption, Task::Localize}) {
    auto c = small(t, dir);
    synth_dataset(c, dir / "a", 9);
    synth_dataset(c, dir / "b", 9);
    synth_dataset(c, dir / "c", 10);
    const fs::path sub = to_string(t);
    std::size_t files = 0, differ = 0;
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) {
      ++files;
      EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / sub / e.path().filename())) << e.path();
      differ += slurp(e.path()) != slurp(dir / "c" / sub / e.path().filename());
    }
    EXPECT_GT(files, 0u);
    EXPECT_GT(differ, 0u);
  }
  fs::remove_all(dir);
}

TEST(Synth, PlantedMeansAreRecoverable) {
  const fs::path dir = scratch("planted");
  auto c = small(Task::Recognize, dir);
  c.streams = {{"clean", Quantizer::AP, false, 0.0}};
  synth_dataset(c, dir, 4);
  const Tensor x = read_tensor((dir / "recognize" / "clean_train.vtf").string());
  const Tensor y = read_tensor((dir / "recognize" / "labels_train.vtf").string());
  const std::size_t N = x.dim(0), L = x.dim(1), D = x.dim(2);
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = 0; b < N; ++b) {
      bool same = true;
      for (std::size_t d = 0; d < D; ++d) same = same && x.at({a, L - 1, d}) == x.at({b, 0, d});
      EXPECT_EQ(same, y[a] == y[b]);
    }
  fs::remove_all(dir);
}

TEST(Synth, MalformedInputsAreDataErrors) {
  const fs::path dir = scratch("malformed");
  auto c = small(Task::Caption, dir);
  c.dataset.videos = 2;
  generate(c, *c.seed);
  {
    std::ofstream out(fs::path(c.data_dir) / "caption" / "references.json");
    out << "{not json";
  }
  EXPECT_THROW(detail::run_caption(c, fs::path(c.data_dir), *c.seed), DataError);
  fs::remove_all(dir);
}

TEST(GradientSuite, AllChecksPass) {
  for (std::uint64_t seed : {7u, 17u}) {
    const auto reports = run_gradient_suite(seed);
    EXPECT_GE(reports.size(), 35u);
    for (const auto& r : reports) {
      EXPECT_TRUE(r.passed) << r.name << " max rel " << r.max_rel_error;
      EXPECT_GE(r.checked, 1u);
    }
  }
}

TEST(Run, CaptionEmitsFiveProposalsPerVideo) {
  const fs::path dir = scratch("caption");
  const auto c = small(Task::Caption, dir);
  const auto r = run_experiment(c, *c.seed);
  const auto& videos = r.report["metrics"]["videos"];
  ASSERT_EQ(videos.size(), 3u);
  for (const auto& v : videos) EXPECT_EQ(v["proposals"].size(), 5u);
  fs::remove_all(dir);
}

TEST(Run, ReportsAreStableAcrossReruns) {
  const fs::path dir = scratch("stable");
  for (Task t : {Task::Recognize, Task::Caption, Task::Localize}) {
    const auto c = small(t, dir);
    const auto a = run_experiment(c, 11);
    fs::remove_all(c.data_dir);
    const auto b = run_experiment(c, 11);
    EXPECT_EQ(without_time(a.report).dump(2), without_time(b.report).dump(2)) << to_string(t);
    EXPECT_EQ(a.report["seed"], 11);
  }
  fs::remove_all(dir);
}

TEST(Run, RecognizeFusedAtLeastEachStream) {
  const fs::path dir = scratch("recognize");
  const auto c = small(Task::Recognize, dir);
  const auto r = run_experiment(c, *c.seed);
  const auto& m = r.report["metrics"];
  const double fused = m["fused"]["top1"];
  for (const auto& s : m["streams"]) EXPECT_GE(fused, s["top1"].get<double>());
  write_report(r.report, c.output);
  EXPECT_TRUE(fs::exists(fs::path(c.output) / "report.json"));
  fs::remove_all(dir);
}

TEST(Run, GradcheckReportsPass) {
  ExperimentConfig c;
  c.task = Task::Gradcheck;
  const auto r = run_experiment(c, 3);
  EXPECT_TRUE(r.numeric_ok);
  EXPECT_TRUE(r.report["metrics"]["passed"].get<bool>());
}
