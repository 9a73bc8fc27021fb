// ============================================================================
// pipeline.hpp - configuration and stage functions behind the command line
//
// Stages: synth -> preprocess -> train -> calibrate -> detect -> evaluate.
// The labeled series is split chronologically: the first train_fraction of
// rows is the training part; the rest is the test part, whose first
// validation_fraction is used for calibration and model selection while the
// remainder is evaluated.
// ============================================================================
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qtsad/checkpoint.hpp"
#include "qtsad/data.hpp"
#include "qtsad/detect.hpp"
#include "qtsad/metrics.hpp"
#include "qtsad/trainer.hpp"

namespace qtsad::pipeline {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataSection {
  std::string input = "synth.csv";  // labeled series, resolved against out_dir when relative and absent
  std::string out_dir = "qtsad_out";
  std::string timestamp_column = "timestamp";
  std::string label_column = "label";
  std::vector<std::string> ignore_columns;
};

struct SplitSection {
  double train_fraction = 0.4;
  double validation_fraction = 1.0 / 3.0;  // of the test part
};

struct FeatureSection {
  int count = 16;  // keep the top `count` features by Gini importance; 0 keeps all
  int n_trees = 100;
  int max_depth = 8;
};

struct WindowSection {
  bool estimate = false;  // derive w from the validation labels
  int size = 3;
  int train_stride = 0;  // 0 = non-overlapping (w + 1)
};

struct SelectionSection {
  // Keep the parameters of the epoch with the best validation TaF1 when
  // the test part is labeled; evaluated every `every` epochs.
  bool enabled = true;
  int every = 1;
};

// Desk-scale synthetic series: 5,000 steps, 4 features, 6 attacks placed
// after the attack-free training prefix.
inline data::SynthSpec default_synth() {
  data::SynthSpec s;
  s.length = 5000;
  s.features = 4;
  s.random_attacks = 6;
  s.attack_free_prefix = 2000;
  return s;
}

struct PipelineConfig {
  DataSection data;
  SplitSection split;
  FeatureSection features;
  WindowSection window;
  int n_clusters = 300;  // 0 disables downsampling
  model::ModelConfig model;
  trainer::TrainConfig train;
  SelectionSection selection;
  detect::DetectorConfig detect;
  data::SynthSpec synth = default_synth();
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig config_from_json(const nlohmann::json& j);

// Applies QTSAD_<SECTION>_<KEY> style overrides. Each name is matched
// against the leaf paths of `config_json` (nested keys joined with '_',
// upper-cased); values are parsed by the type of the existing leaf.
void apply_env_overrides(nlohmann::json& config_json, const std::vector<std::pair<std::string, std::string>>& env);

// Environment variables of this process whose names start with QTSAD_.
std::vector<std::pair<std::string, std::string>> process_overrides();

// Defaults <- file (when given) <- environment <- seed (when given).
PipelineConfig load_config(const std::optional<std::string>& path,
                           const std::vector<std::pair<std::string, std::string>>& env,
                           std::optional<std::uint64_t> seed);

// Seeds of every randomized stage, derived from the single pipeline seed.
struct StageSeeds {
  std::uint64_t synth, forest, kmeans, train, noise, detect;
};
StageSeeds stage_seeds(std::uint64_t seed);

nlohmann::json to_json(const data::SynthSpec& s);
data::SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const detect::DetectorConfig& c);
detect::DetectorConfig detector_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

data::TimeSeriesTable run_synth(const PipelineConfig& cfg);

struct Prepared {
  data::TimeSeriesTable train;  // normalized, selected features
  data::TimeSeriesTable test;   // normalized, selected features, labeled when the input is
  data::NormalizationStats stats;
  std::vector<data::FeatureImportance> importances;  // empty when selection was skipped
  int window = 3;
  std::size_t validation_rows = 0;  // leading rows of `test` used for calibration

  nlohmann::json metadata() const;
};

Prepared preprocess(const data::TimeSeriesTable& raw, const PipelineConfig& cfg);

// Validation slice of the test part and the evaluation slice, which keeps
// the w preceding rows as context.
struct TestSplit {
  data::TimeSeriesTable validation;
  data::TimeSeriesTable evaluation;
  std::size_t evaluation_offset = 0;  // row of `test` where `evaluation` begins
  std::size_t first_scored = 0;
};
TestSplit split_test(const data::TimeSeriesTable& test, std::size_t validation_rows, int w);

data::WindowSet training_windows(const data::TimeSeriesTable& train, const PipelineConfig& cfg, int w);

using ProgressCallback = std::function<void(const trainer::TrainState&, std::optional<double> validation_taf1)>;

// Trains and returns a checkpoint whose extra metadata carries the
// preprocessing record. With a labeled validation slice and selection
// enabled, the returned parameters are those of the best-scoring epoch.
checkpoint::Checkpoint run_train(const PipelineConfig& cfg, const Prepared& prep,
                                 const ProgressCallback& progress = {});

detect::CalibrationStats run_calibrate(const checkpoint::Checkpoint& ckpt, const PipelineConfig& cfg,
                                       const data::TimeSeriesTable& validation);

nlohmann::json to_json(const detect::CalibrationStats& c);
detect::CalibrationStats calibration_from_json(const nlohmann::json& j);

// Scores the evaluation slice; trace t values are rows of the test part.
detect::ScoreTrace run_detect(const checkpoint::Checkpoint& ckpt, const PipelineConfig& cfg, const TestSplit& split,
                              const detect::CalibrationStats& calib);

// Raw scores of a slice with t re-based to rows of the test part.
detect::RawScores score_slice(const checkpoint::Checkpoint& ckpt, const detect::DetectorConfig& dcfg,
                              const data::TimeSeriesTable& slice, std::size_t offset);

// Metrics of a trace against labels indexed by rows of the test part,
// restricted to the scored rows.
metrics::MetricReport evaluate_trace(const detect::ScoreTrace& trace, const std::vector<bool>& labels);

// Trace CSV reader (the columns written by detect::trace_csv).
detect::ScoreTrace parse_trace_csv(const std::string& text);

}  // namespace qtsad::pipeline
