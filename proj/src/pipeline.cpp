#include <algorithm>
#include <cmath>
#include <sstream>

#include "qtsad/errors.hpp"
#include "qtsad/pipeline.hpp"

namespace qtsad::pipeline {

using nlohmann::json;

namespace {

bool has_both_classes(const std::vector<bool>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), true);
  return pos > 0 && static_cast<std::size_t>(pos) < labels.size();
}

model::ModelConfig model_for(const PipelineConfig& cfg, int features, int window) {
  model::ModelConfig m = cfg.model;
  m.features = features;
  m.window = window;
  m.validate();
  return m;
}

double validation_taf1(const model::ModelConfig& m, const trainer::TrainState& st, const detect::DetectorConfig& dcfg,
                       const data::TimeSeriesTable& validation) {
  const model::Generator gen(m);
  const model::Critic critic(m);
  const detect::Models models{gen, st.generator, critic, st.critic};
  const auto raw = detect::compute_raw_scores(validation.values, models, dcfg);
  const auto trace = detect::decide(raw, detect::calibrate(raw), dcfg);
  return evaluate_trace(trace, *validation.labels).taf1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthesis and preprocessing
// ---------------------------------------------------------------------------

data::TimeSeriesTable run_synth(const PipelineConfig& cfg) { return data::synth_generate(cfg.synth).table; }

json Prepared::metadata() const {
  json imp = json::array();
  for (const auto& f : importances) imp.push_back({{"feature", f.feature}, {"importance", f.importance}});
  return {{"features", stats.feature_names},
          {"min", stats.min},
          {"max", stats.max},
          {"importances", imp},
          {"window", window},
          {"validation_rows", validation_rows},
          {"train_rows", train.rows()},
          {"test_rows", test.rows()}};
}

Prepared preprocess(const data::TimeSeriesTable& raw, const PipelineConfig& cfg) {
  const std::size_t t = raw.rows();
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.split.train_fraction * static_cast<double>(t)));
  if (n_train < 2 || n_train >= t) throw InputError("series of " + std::to_string(t) + " rows is too short to split");
  const data::TimeSeriesTable train_raw = data::slice_rows(raw, 0, n_train);
  const data::TimeSeriesTable test_raw = data::slice_rows(raw, n_train, t);
  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.split.validation_fraction * static_cast<double>(test_raw.rows())));
  if (n_val < 2 || n_val >= test_raw.rows()) throw InputError("test part is too short for a validation split");

  Prepared p;
  p.validation_rows = n_val;
  std::vector<std::string> keep = raw.feature_names;
  const bool labeled = test_raw.labels.has_value();
  std::vector<bool> val_labels;
  if (labeled) val_labels.assign(test_raw.labels->begin(), test_raw.labels->begin() + static_cast<std::ptrdiff_t>(n_val));

  // Feature ranking uses the labeled validation slice only, never the rows
  // that are evaluated later.
  if (cfg.features.count > 0 && static_cast<std::size_t>(cfg.features.count) < raw.features() && labeled &&
      has_both_classes(val_labels)) {
    data::TimeSeriesTable val = data::slice_rows(test_raw, 0, n_val);
    data::ForestConfig fc;
    fc.n_trees = cfg.features.n_trees;
    fc.max_depth = cfg.features.max_depth;
    fc.seed = stage_seeds(cfg.seed).forest;
    p.importances = data::gini_feature_importance(val, fc);
    keep.clear();
    for (int i = 0; i < cfg.features.count; ++i) keep.push_back(p.importances[static_cast<std::size_t>(i)].feature);
    // Preserve the original column order among the selected features.
    std::vector<std::string> ordered;
    for (const auto& name : raw.feature_names) {
      if (std::find(keep.begin(), keep.end(), name) != keep.end()) ordered.push_back(name);
    }
    keep = ordered;
  }

  const auto train_sel = data::select_features(train_raw, keep);
  p.stats = data::minmax_fit(train_sel);
  p.train = data::minmax_apply(train_sel, p.stats);
  p.test = data::minmax_apply(data::select_features(test_raw, keep), p.stats);

  if (cfg.window.estimate) {
    if (!labeled) throw InputError("window size estimation needs labels in the test part");
    p.window = data::estimate_window_size(val_labels);
  } else {
    p.window = cfg.window.size;
  }
  return p;
}

TestSplit split_test(const data::TimeSeriesTable& test, std::size_t validation_rows, int w) {
  const auto ww = static_cast<std::size_t>(w);
  if (validation_rows < ww + 1 || validation_rows >= test.rows()) {
    throw InputError("validation split of " + std::to_string(validation_rows) + " rows does not fit w = " +
                     std::to_string(w));
  }
  TestSplit s;
  s.validation = data::slice_rows(test, 0, validation_rows);
  s.evaluation_offset = validation_rows - ww;
  s.evaluation = data::slice_rows(test, s.evaluation_offset, test.rows());
  s.first_scored = validation_rows;
  return s;
}

data::WindowSet training_windows(const data::TimeSeriesTable& train, const PipelineConfig& cfg, int w) {
  const int stride = cfg.window.train_stride > 0 ? cfg.window.train_stride : w + 1;
  data::WindowSet ws = data::make_windows(train, w, stride);
  if (cfg.n_clusters > 0 && static_cast<std::size_t>(cfg.n_clusters) < ws.size()) {
    ws = data::kmeans_downsample(ws, cfg.n_clusters, stage_seeds(cfg.seed).kmeans);
  }
  return ws;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

checkpoint::Checkpoint run_train(const PipelineConfig& cfg, const Prepared& prep, const ProgressCallback& progress) {
  checkpoint::Checkpoint ck;
  ck.model = model_for(cfg, static_cast<int>(prep.train.features()), prep.window);
  ck.train = cfg.train;
  cfg.detect.validate(ck.model.features);
  const data::WindowSet ws = training_windows(prep.train, cfg, prep.window);

  std::optional<data::TimeSeriesTable> validation;
  if (cfg.selection.enabled && prep.test.labels) {
    auto v = split_test(prep.test, prep.validation_rows, prep.window).validation;
    if (has_both_classes(*v.labels)) validation = std::move(v);
  }

  trainer::TrainState state = trainer::initial_state(ck.model, ck.train);
  std::optional<trainer::TrainState> best;
  double best_score = -1.0;
  int best_epoch = 0;
  trainer::train(ck.model, ck.train, ws, state, [&](const trainer::TrainState& st) {
    std::optional<double> score;
    if (validation && (st.epoch % cfg.selection.every == 0 || st.epoch == cfg.train.epochs)) {
      score = validation_taf1(ck.model, st, cfg.detect, *validation);
      if (*score > best_score) {
        best_score = *score;
        best_epoch = st.epoch;
        best = st;
      }
    }
    if (progress) progress(st, score);
  });

  ck.extra["preprocess"] = prep.metadata();
  ck.extra["training_windows"] = ws.size();
  ck.extra["window_provenance"] = ws.provenance == data::Provenance::Raw ? "raw" : "cluster_centroids";
  if (best) {
    // Keep the full history of the run while restoring the selected weights.
    const auto history = state.history;
    state = *best;
    state.history = history;
    ck.extra["selected_epoch"] = best_epoch;
    ck.extra["selected_validation_taf1"] = best_score;
  } else {
    ck.extra["selected_epoch"] = state.epoch;
  }
  ck.state = std::move(state);
  return ck;
}

// ---------------------------------------------------------------------------
// Calibration, detection, evaluation
// ---------------------------------------------------------------------------

detect::RawScores score_slice(const checkpoint::Checkpoint& ckpt, const detect::DetectorConfig& dcfg,
                              const data::TimeSeriesTable& slice, std::size_t offset) {
  if (slice.features() != static_cast<std::size_t>(ckpt.model.features)) {
    throw ShapeError("series has " + std::to_string(slice.features()) + " features but the model expects " +
                     std::to_string(ckpt.model.features));
  }
  const model::Generator gen(ckpt.model);
  const model::Critic critic(ckpt.model);
  const detect::Models models{gen, ckpt.state.generator, critic, ckpt.state.critic};
  auto raw = detect::compute_raw_scores(slice.values, models, dcfg);
  for (auto& t : raw.t) t += offset;
  return raw;
}

detect::CalibrationStats run_calibrate(const checkpoint::Checkpoint& ckpt, const PipelineConfig& cfg,
                                       const data::TimeSeriesTable& validation) {
  return detect::calibrate(score_slice(ckpt, cfg.detect, validation, 0));
}

detect::ScoreTrace run_detect(const checkpoint::Checkpoint& ckpt, const PipelineConfig& cfg, const TestSplit& split,
                              const detect::CalibrationStats& calib) {
  return detect::decide(score_slice(ckpt, cfg.detect, split.evaluation, split.evaluation_offset), calib, cfg.detect);
}

metrics::MetricReport evaluate_trace(const detect::ScoreTrace& trace, const std::vector<bool>& labels) {
  if (trace.size() == 0) throw InputError("cannot evaluate an empty trace");
  const std::size_t first = trace.t.front(), last = trace.t.back();
  if (last >= labels.size()) {
    throw ShapeError("trace reaches row " + std::to_string(last) + " but only " + std::to_string(labels.size()) +
                     " labels are available");
  }
  std::vector<bool> flags(last - first + 1, false), truth(labels.begin() + static_cast<std::ptrdiff_t>(first),
                                                           labels.begin() + static_cast<std::ptrdiff_t>(last + 1));
  for (std::size_t i = 0; i < trace.size(); ++i) flags[trace.t[i] - first] = trace.anomaly[i];
  return metrics::evaluate(flags, truth);
}

detect::ScoreTrace parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "t,S_iv,S_topk_raw,S_topk_norm,S_critic_raw,S_critic_norm,A,gate,anomaly,mean_logvar") {
    throw ParseError("trace csv: unexpected header");
  }
  detect::ScoreTrace tr;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw ParseError("trace csv: row " + std::to_string(line_no) + " has the wrong width");
    try {
      std::size_t used = 0;
      const auto t = std::stoull(cells[0], &used);
      if (used != cells[0].size() || (!tr.t.empty() && t <= tr.t.back())) throw std::invalid_argument("t");
      tr.t.push_back(t);
      const auto num = [&](const std::string& s) {
        std::size_t n = 0;
        const double v = std::stod(s, &n);
        if (n != s.size()) throw std::invalid_argument(s);
        return v;
      };
      tr.s_iv.push_back(num(cells[1]));
      tr.topk_raw.push_back(num(cells[2]));
      tr.topk_norm.push_back(num(cells[3]));
      tr.critic_raw.push_back(num(cells[4]));
      tr.critic_norm.push_back(num(cells[5]));
      tr.a.push_back(num(cells[6]));
      if ((cells[7] != "0" && cells[7] != "1") || (cells[8] != "0" && cells[8] != "1")) {
        throw std::invalid_argument("flag");
      }
      tr.gate.push_back(cells[7] == "1");
      tr.anomaly.push_back(cells[8] == "1");
      tr.mean_logvar.push_back(num(cells[9]));
    } catch (const std::exception&) {
      throw ParseError("trace csv: row " + std::to_string(line_no) + " is malformed");
    }
  }
  return tr;
}

}  // namespace qtsad::pipeline
