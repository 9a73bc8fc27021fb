#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qtsad/cli.hpp"
#include "qtsad/errors.hpp"
#include "qtsad/pipeline.hpp"

using namespace qtsad;
using namespace qtsad::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("qtsad_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

// Small end-to-end configuration: 900 rows, 3 short attacks after row 360.
json tiny_config(const std::string& out_dir) {
  const json shape = {{"n_qubits", 2}, {"n_blocks", 2}, {"injection_blocks", 1}};
  return {{"data", {{"out_dir", out_dir}}},
          {"synth",
           {{"length", 900},
            {"attack_free_prefix", 360},
            {"random_attacks", 3},
            {"min_duration", 20},
            {"max_duration", 40},
            {"min_gap", 30}}},
          {"model", {{"generator_hidden", 2}, {"critic_hidden", 2}, {"generator_shape", shape}, {"critic_shape", shape}}},
          {"train", {{"epochs", 1}, {"batch_size", 8}, {"n_critic", 1}}},
          {"n_clusters", 20},
          {"detect", {{"threshold_window", 101}, {"k_top", 1}}}};
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST_CASE("default configuration round-trips through JSON") {
  const PipelineConfig c = config_from_json(to_json(PipelineConfig{}));
  CHECK(to_json(c) == to_json(PipelineConfig{}));
  CHECK(c.features.count == 16);
  CHECK(c.n_clusters == 300);
  CHECK(c.window.size == 3);
  CHECK(c.split.validation_fraction == doctest::Approx(1.0 / 3.0));
  CHECK(c.synth.length == 5000);
  CHECK(c.synth.features == 4);
  CHECK(c.synth.random_attacks == 6);
}

TEST_CASE("config rejects unknown keys, bad types and derived settings") {
  CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"split", {{"train_fraction", "half"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"split", {{"train_fraction", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"model", {{"features", 4}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"train", {{"seed", 4}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"detect", {{"noise", {{"seed", 4}}}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"n_clusters", -1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"detect", {{"threshold_window", 4}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"synth", {{"length", -5}}}}), ConfigError);
}

TEST_CASE("stage seeds derive from the pipeline seed") {
  const StageSeeds a = stage_seeds(7), b = stage_seeds(7), c = stage_seeds(8);
  CHECK(a.train == b.train);
  CHECK(a.train != c.train);
  const std::vector<std::uint64_t> all = {a.synth, a.forest, a.kmeans, a.train, a.noise, a.detect};
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) CHECK(all[i] != all[j]);
  }
  const PipelineConfig cfg = config_from_json({{"seed", 7}});
  CHECK(cfg.synth.seed == a.synth);
  CHECK(cfg.train.seed == a.train);
  CHECK(cfg.train.noise.seed == a.noise);
  CHECK(cfg.detect.seed == a.detect);
}

TEST_CASE("environment overrides address leaves by section and key") {
  json j = to_json(PipelineConfig{});
  apply_env_overrides(j, {{"QTSAD_TRAIN_EPOCHS", "7"},
                          {"QTSAD_DETECT_MODE", "causal"},
                          {"QTSAD_TRAIN_NOISE_ENABLED", "true"},
                          {"QTSAD_MODEL_GENERATOR_SHAPE_N_QUBITS", "3"},
                          {"QTSAD_SPLIT_TRAIN_FRACTION", "0.5"},
                          {"QTSAD_N_CLUSTERS", "12"}});
  const PipelineConfig c = config_from_json(j);
  CHECK(c.train.epochs == 7);
  CHECK(c.detect.mode == detect::ThresholdMode::CausalOnline);
  CHECK(c.train.noise.enabled);
  CHECK(c.model.generator_shape.n_qubits == 3);
  CHECK(c.split.train_fraction == 0.5);
  CHECK(c.n_clusters == 12);

  json k = to_json(PipelineConfig{});
  CHECK_THROWS_AS(apply_env_overrides(k, {{"QTSAD_TRAIN_EPOCH", "7"}}), ConfigError);
  CHECK_THROWS_AS(apply_env_overrides(k, {{"QTSAD_TRAIN_EPOCHS", "seven"}}), ConfigError);
  CHECK_THROWS_AS(apply_env_overrides(k, {{"QTSAD_TRAIN_EPOCHS", "7.5"}}), ConfigError);
  CHECK_THROWS_AS(apply_env_overrides(k, {{"QTSAD_TRAIN_NOISE_ENABLED", "maybe"}}), ConfigError);
}

TEST_CASE("load_config layers defaults, file, environment and seed") {
  TempDir dir("config");
  spit(dir / "c.json", R"({"train": {"epochs": 3, "learning_rate": 0.01}, "seed": 5})");
  const PipelineConfig c = load_config(dir / "c.json", {{"QTSAD_TRAIN_EPOCHS", "4"}}, std::uint64_t{9});
  CHECK(c.train.epochs == 4);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.batch_size == trainer::TrainConfig{}.batch_size);
  CHECK(c.seed == 9);
  CHECK(c.train.seed == stage_seeds(9).train);

  CHECK(load_config(dir / "c.json", {}, std::nullopt).seed == 5);
  CHECK_THROWS_AS(load_config(dir / "missing.json", {}, std::nullopt), InputError);
  spit(dir / "bad.json", "{\"train\": ");
  CHECK_THROWS_AS(load_config(dir / "bad.json", {}, std::nullopt), ParseError);
  spit(dir / "arr.json", "[1, 2]");
  CHECK_THROWS_AS(load_config(dir / "arr.json", {}, std::nullopt), ConfigError);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

TEST_CASE("preprocess splits chronologically and normalizes with training stats") {
  PipelineConfig cfg = config_from_json(tiny_config("unused"));
  const auto raw = run_synth(cfg);
  const Prepared p = preprocess(raw, cfg);
  CHECK(p.train.rows() == 360);
  CHECK(p.test.rows() == 540);
  CHECK(p.validation_rows == 180);
  CHECK(p.window == 3);
  CHECK(p.importances.empty());  // 16 >= 4 features keeps all of them
  CHECK(p.train.feature_names == raw.feature_names);
  for (std::size_t r = 0; r < p.train.rows(); ++r) {
    for (double v : p.train.values.row(r)) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK(p.test.timestamps.front() == 360.0);
  CHECK(*p.test.labels == std::vector<bool>(raw.labels->begin() + 360, raw.labels->end()));

  const json meta = p.metadata();
  CHECK(meta.at("features") == raw.feature_names);
  CHECK(meta.at("validation_rows") == 180);
}

TEST_CASE("preprocess keeps the most important features in column order") {
  json j = tiny_config("unused");
  j["features"] = {{"count", 2}, {"n_trees", 20}, {"max_depth", 4}};
  // Three long plateau attacks on feature 2, one of them inside the
  // validation slice (test rows 0..179 = series rows 360..539).
  j["synth"]["random_attacks"] = 0;
  j["synth"]["attacks"] = json::array();
  for (int start : {400, 600, 800}) {
    j["synth"]["attacks"].push_back(
        {{"kind", "plateau"}, {"start", start}, {"length", 60}, {"feature", 2}, {"magnitude", 1.5}});
  }
  const PipelineConfig cfg = config_from_json(j);
  const Prepared p = preprocess(run_synth(cfg), cfg);
  REQUIRE(p.importances.size() == 4);
  CHECK(p.importances.front().feature == "f2");
  CHECK(p.train.features() == 2);
  const auto& names = p.train.feature_names;
  CHECK(std::find(names.begin(), names.end(), "f2") != names.end());
  CHECK(std::is_sorted(names.begin(), names.end()));
  CHECK(p.stats.feature_names == names);
}

TEST_CASE("window size can be estimated from the validation labels") {
  json j = tiny_config("unused");
  j["window"] = {{"estimate", true}};
  j["synth"]["random_attacks"] = 0;
  j["synth"]["attacks"] = {{{"kind", "drift"}, {"start", 400}, {"length", 30}, {"feature", 1}, {"magnitude", 1.0}},
                           {{"kind", "replay"}, {"start", 480}, {"length", 20}, {"feature", 0}, {"magnitude", 0.0}}};
  const PipelineConfig cfg = config_from_json(j);
  const auto raw = run_synth(cfg);
  const Prepared p = preprocess(raw, cfg);
  const std::vector<bool> val(raw.labels->begin() + 360, raw.labels->begin() + 540);
  CHECK(p.window == data::estimate_window_size(val));
}

TEST_CASE("split_test keeps w rows of context before the evaluated part") {
  const PipelineConfig cfg = config_from_json(tiny_config("unused"));
  const Prepared p = preprocess(run_synth(cfg), cfg);
  const TestSplit s = split_test(p.test, p.validation_rows, 3);
  CHECK(s.validation.rows() == 180);
  CHECK(s.evaluation_offset == 177);
  CHECK(s.evaluation.rows() == 540 - 177);
  CHECK(s.first_scored == 180);
  CHECK(s.evaluation.timestamps.front() == p.test.timestamps[177]);
  CHECK_THROWS_AS(split_test(p.test, 3, 3), InputError);
  CHECK_THROWS_AS(split_test(p.test, 540, 3), InputError);
}

TEST_CASE("training windows are non-overlapping and downsampled to n_clusters") {
  json j = tiny_config("unused");
  PipelineConfig cfg = config_from_json(j);
  const Prepared p = preprocess(run_synth(cfg), cfg);
  cfg.n_clusters = 0;
  const auto raw = training_windows(p.train, cfg, 3);
  CHECK(raw.size() == 90);  // 360 rows, windows of 4 with stride 4
  CHECK(raw.provenance == data::Provenance::Raw);
  cfg.n_clusters = 20;
  const auto reduced = training_windows(p.train, cfg, 3);
  CHECK(reduced.size() == 20);
  CHECK(reduced.provenance != data::Provenance::Raw);
  cfg.n_clusters = 500;
  CHECK(training_windows(p.train, cfg, 3).size() == 90);
  cfg.window.train_stride = 1;
  cfg.n_clusters = 0;
  CHECK(training_windows(p.train, cfg, 3).size() == 357);
}

TEST_CASE("run_train records preprocessing metadata and selection") {
  PipelineConfig cfg = config_from_json(tiny_config("unused"));
  cfg.train.epochs = 2;
  const Prepared p = preprocess(run_synth(cfg), cfg);
  int calls = 0;
  const auto ck = run_train(cfg, p, [&](const trainer::TrainState&, std::optional<double>) { ++calls; });
  CHECK(calls == 2);
  CHECK(ck.model.features == 4);
  CHECK(ck.model.window == 3);
  CHECK(ck.state.history.size() == 2);
  CHECK(ck.extra.at("preprocess").at("window") == 3);
  CHECK(ck.extra.at("training_windows") == 20);
  const int sel = ck.extra.at("selected_epoch");
  CHECK((sel == 1 || sel == 2));
  CHECK(ck.state.epoch == sel);

  cfg.selection.enabled = false;
  const auto last = run_train(cfg, p);
  CHECK(last.extra.at("selected_epoch") == 2);
  CHECK(last.state.epoch == 2);
}

TEST_CASE("evaluate_trace scores only the traced rows") {
  detect::ScoreTrace tr;
  tr.t = {4, 5, 6, 7};
  tr.anomaly = {false, true, true, false};
  const std::vector<bool> labels = {true, true, true, true, false, true, true, false};
  const auto r = evaluate_trace(tr, labels);
  CHECK(r.taf1 == doctest::Approx(1.0));
  CHECK(r.etap == doctest::Approx(1.0));
  CHECK(r.etar == doctest::Approx(1.0));

  tr.anomaly = {false, false, false, false};
  CHECK(evaluate_trace(tr, labels).etar == 0.0);
  CHECK_THROWS_AS(evaluate_trace(tr, std::vector<bool>(7, false)), ShapeError);
  CHECK_THROWS_AS(evaluate_trace(detect::ScoreTrace{}, labels), InputError);
}

TEST_CASE("trace CSV parses back what detect writes") {
  detect::RawScores raw;
  raw.t = {3, 4, 5, 6, 7};
  raw.s_iv = {0.0, 0.3, 0.0, 0.1, 0.0};
  raw.s_topk = {0.1, 0.9, 0.2, 0.4, 0.1};
  raw.s_critic = {-1.0, 0.5, -0.5, 0.0, -1.0};
  raw.mean_logvar = {-2.0, -1.5, -2.0, -1.25, -2.0};
  raw.mu = Matrix(5, 1);
  raw.logvar = Matrix(5, 1);
  detect::DetectorConfig cfg;
  cfg.threshold_window = 3;
  const auto tr = detect::decide(raw, detect::calibrate(raw), cfg);
  const auto back = parse_trace_csv(detect::trace_csv(tr));
  CHECK(back.t == tr.t);
  CHECK(back.a == tr.a);
  CHECK(back.s_iv == tr.s_iv);
  CHECK(back.critic_norm == tr.critic_norm);
  CHECK(back.gate == tr.gate);
  CHECK(back.anomaly == tr.anomaly);
  CHECK(back.mean_logvar == tr.mean_logvar);
  CHECK(detect::trace_csv(back) == detect::trace_csv(tr));

  CHECK_THROWS_AS(parse_trace_csv("t,a\n1,2\n"), ParseError);
  const std::string header = "t,S_iv,S_topk_raw,S_topk_norm,S_critic_raw,S_critic_norm,A,gate,anomaly,mean_logvar\n";
  CHECK_THROWS_AS(parse_trace_csv(header + "1,0,0,0,0,0,0,0,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv(header + "1,0,0,0,0,0,0,2,0,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv(header + "1,0,0,0,x,0,0,0,0,0\n"), ParseError);
  CHECK_THROWS_AS(parse_trace_csv(header + "2,0,0,0,0,0,0,0,0,0\n1,0,0,0,0,0,0,0,0,0\n"), ParseError);
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

TEST_CASE("cli usage errors exit with 2 and help with 0") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"train", "--bogus"}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"train", "--config", "/nonexistent/qtsad.json"}).code == 2);
}

TEST_CASE("cli synth writes the labeled series") {
  TempDir dir("cli_synth");
  json j = tiny_config((dir.path / "out").string());
  spit(dir / "c.json", j.dump());
  const auto r = run_cli({"synth", "--config", dir / "c.json", "--out", dir / "s.csv"});
  REQUIRE(r.code == 0);
  const auto table = data::load_csv(dir / "s.csv");
  CHECK(table.rows() == 900);
  CHECK(table.features() == 4);
  CHECK(std::count(table.labels->begin(), table.labels->end(), true) > 0);

  j["synth"]["random_attacks"] = 0;
  spit(dir / "zero.json", j.dump());
  REQUIRE(run_cli({"synth", "--config", dir / "zero.json"}).code == 0);
  const auto normal = data::load_csv(dir / "out/synth.csv");
  CHECK(std::count(normal.labels->begin(), normal.labels->end(), true) == 0);

  j["synth"]["length"] = -10;
  spit(dir / "neg.json", j.dump());
  const auto neg = run_cli({"synth", "--config", dir / "neg.json"});
  CHECK(neg.code == 2);
  CHECK(neg.err.find("synth.length") != std::string::npos);
}

TEST_CASE("cli train needs preprocessed data") {
  TempDir dir("cli_missing");
  spit(dir / "c.json", tiny_config((dir.path / "out").string()).dump());
  const auto r = run_cli({"train", "--config", dir / "c.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("preprocess") != std::string::npos);
  CHECK(run_cli({"preprocess", "--config", dir / "c.json"}).code == 2);  // no input series yet
}

TEST_CASE("cli pipeline runs end to end and is deterministic") {
  TempDir dir("cli_e2e");
  spit(dir / "c.json", tiny_config((dir.path / "out").string()).dump());
  const std::string cfg = dir / "c.json";
  const auto step = [&](std::vector<std::string> args) {
    args.push_back("--config");
    args.push_back(cfg);
    const auto r = run_cli(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    return r;
  };
  step({"synth"});
  step({"preprocess"});
  step({"train", "--quiet"});
  for (const char* f : {"train.csv", "test.csv", "preprocess.json", "model.ckpt", "history.csv"}) {
    CHECK(fs::exists(dir.path / "out" / f));
  }
  const std::string ckpt1 = slurp(dir / "out/model.ckpt");
  step({"train", "--quiet", "--checkpoint", dir / "again.ckpt"});
  CHECK(slurp(dir / "again.ckpt") == ckpt1);

  step({"calibrate"});
  CHECK(fs::exists(dir.path / "out/calibration.json"));
  step({"detect"});
  const std::string trace1 = slurp(dir / "out/trace.csv");
  const std::string svg1 = slurp(dir / "out/trace.svg");
  const auto eval = step({"evaluate"});
  CHECK(eval.out.find("TaF1") != std::string::npos);
  const json m = json::parse(slurp(dir / "out/metrics.json"));
  CHECK(m.contains("taf1"));
  step({"plot", "--out", dir / "p.svg"});
  CHECK(slurp(dir / "p.svg").rfind("<svg", 0) == 0);
  step({"detect"});
  CHECK(slurp(dir / "out/trace.csv") == trace1);
  CHECK(slurp(dir / "out/trace.svg") == svg1);

  // Misaligned labels: the trace reaches further than the label file.
  const auto short_labels = data::slice_rows(data::load_csv(dir / "out/test.csv"), 0, 100);
  data::write_csv(short_labels, dir / "short.csv");
  CHECK(run_cli({"evaluate", "--config", cfg, "--labels", dir / "short.csv"}).code == 2);

  // A series shorter than w + 1 rows.
  const auto raw = data::load_csv(dir / "out/synth.csv");
  data::write_csv(data::slice_rows(raw, 0, 3), dir / "tiny.csv");
  CHECK(run_cli({"detect", "--config", cfg, "--series", dir / "tiny.csv"}).code == 2);
  data::write_csv(data::slice_rows(raw, 0, 360), dir / "normal.csv");
  step({"detect", "--series", dir / "normal.csv"});

  // A checkpoint from a newer format version.
  std::string bumped = ckpt1;
  bumped[8] = 2;
  spit(dir / "v2.ckpt", bumped);
  const auto v2 = run_cli({"detect", "--config", cfg, "--checkpoint", dir / "v2.ckpt"});
  CHECK(v2.code == 2);
  CHECK(v2.err.find("version") != std::string::npos);
}

TEST_CASE("cli train with zero epochs stores the initial parameters") {
  TempDir dir("cli_zero");
  json j = tiny_config((dir.path / "out").string());
  j["train"]["epochs"] = 0;
  spit(dir / "c.json", j.dump());
  for (const char* cmd : {"synth", "preprocess", "train"}) REQUIRE(run_cli({cmd, "--config", dir / "c.json"}).code == 0);
  const auto ck = checkpoint::load_checkpoint(dir / "out/model.ckpt");
  const PipelineConfig cfg = config_from_json(j);
  model::ModelConfig m = cfg.model;
  m.features = 4;
  m.window = 3;
  const auto init = trainer::initial_state(m, cfg.train);
  CHECK(ck.state.generator == init.generator);
  CHECK(ck.state.critic == init.critic);
  CHECK(ck.state.epoch == 0);
}

TEST_CASE("cli reports numeric failures with exit code 3") {
  TempDir dir("cli_numeric");
  json j = tiny_config((dir.path / "out").string());
  j["train"]["learning_rate"] = 1e308;
  j["train"]["optimizer"] = "sgd";
  j["train"]["epochs"] = 3;
  spit(dir / "c.json", j.dump());
  for (const char* cmd : {"synth", "preprocess"}) REQUIRE(run_cli({cmd, "--config", dir / "c.json"}).code == 0);
  const auto r = run_cli({"train", "--config", dir / "c.json", "--quiet"});
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}
