#include "qtsad/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "qtsad/errors.hpp"
#include "qtsad/json_reader.hpp"
#include "qtsad/pipeline.hpp"
#include "qtsad/plot.hpp"

namespace qtsad::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("failed writing '" + path + "'");
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

struct Options {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> series;
  std::optional<std::string> trace;
  std::optional<std::string> labels;
  bool quiet = false;
};

struct Context {
  pipeline::PipelineConfig cfg;
  std::string out_dir;
  Options opts;

  std::string path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }
  std::string checkpoint_path() const { return opts.checkpoint.value_or(path("model.ckpt")); }
};

data::CsvOptions csv_options(const pipeline::PipelineConfig& cfg) {
  data::CsvOptions o;
  o.timestamp_column = cfg.data.timestamp_column;
  o.label_column = cfg.data.label_column;
  o.ignore_columns = cfg.data.ignore_columns;
  return o;
}

std::string resolve_input(const Context& ctx) {
  const fs::path p(ctx.cfg.data.input);
  if (p.is_relative() && !fs::exists(p) && fs::exists(fs::path(ctx.out_dir) / p)) {
    return (fs::path(ctx.out_dir) / p).string();
  }
  return p.string();
}

// ---------------------------------------------------------------------------
// Prepared data on disk: train.csv, test.csv and preprocess.json
// ---------------------------------------------------------------------------

pipeline::Prepared load_prepared(const Context& ctx) {
  for (const char* name : {"train.csv", "test.csv", "preprocess.json"}) {
    if (!fs::exists(ctx.path(name))) {
      throw InputError("missing " + ctx.path(name) + "; run 'qtsad preprocess' first");
    }
  }
  pipeline::Prepared p;
  p.train = data::load_csv(ctx.path("train.csv"));
  p.test = data::load_csv(ctx.path("test.csv"));
  const json meta = read_json(ctx.path("preprocess.json"));
  json_io::ObjectReader r(meta, "preprocess.json");
  r.get("features", p.stats.feature_names);
  r.get("min", p.stats.min);
  r.get("max", p.stats.max);
  r.get("window", p.window);
  r.get("validation_rows", p.validation_rows);
  if (const json* imp = r.child("importances")) {
    if (!imp->is_array()) throw ParseError("preprocess.json: importances must be an array");
    for (const json& e : *imp) {
      data::FeatureImportance f;
      json_io::ObjectReader er(e, "importances");
      er.get("feature", f.feature);
      er.get("importance", f.importance);
      er.finish();
      p.importances.push_back(f);
    }
  }
  std::size_t rows = 0;
  r.get("train_rows", rows);
  r.get("test_rows", rows);
  r.finish();
  if (p.train.feature_names != p.stats.feature_names || p.test.feature_names != p.stats.feature_names) {
    throw InputError("prepared tables do not match preprocess.json features");
  }
  return p;
}

// Calibration from calibration.json, or computed on the validation slice
// (and stored) when absent.
detect::CalibrationStats obtain_calibration(const Context& ctx, const checkpoint::Checkpoint& ck) {
  if (fs::exists(ctx.path("calibration.json"))) {
    return pipeline::calibration_from_json(read_json(ctx.path("calibration.json")));
  }
  const auto prep = load_prepared(ctx);
  const auto split = pipeline::split_test(prep.test, prep.validation_rows, ck.model.window);
  const auto calib = pipeline::run_calibrate(ck, ctx.cfg, split.validation);
  write_file(ctx.path("calibration.json"), pipeline::to_json(calib).dump(2) + "\n");
  return calib;
}

std::vector<bool> labels_from(const std::string& path, const pipeline::PipelineConfig& cfg) {
  const auto table = data::load_csv(path, csv_options(cfg));
  if (!table.labels) throw InputError("'" + path + "' has no label column");
  return *table.labels;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_synth(const Context& ctx, std::ostream& out) {
  const auto table = pipeline::run_synth(ctx.cfg);
  const std::string path = ctx.opts.out.value_or(ctx.path("synth.csv"));
  write_file(path, data::format_csv(table));
  out << "wrote " << path << " (" << table.rows() << " rows)\n";
}

void cmd_preprocess(const Context& ctx, std::ostream& out) {
  const auto raw = data::load_csv(resolve_input(ctx), csv_options(ctx.cfg));
  const auto prep = pipeline::preprocess(raw, ctx.cfg);
  write_file(ctx.path("train.csv"), data::format_csv(prep.train));
  write_file(ctx.path("test.csv"), data::format_csv(prep.test));
  write_file(ctx.path("preprocess.json"), prep.metadata().dump(2) + "\n");
  out << "train rows " << prep.train.rows() << ", test rows " << prep.test.rows() << ", features "
      << prep.train.features() << ", window " << prep.window << "\n";
}

void cmd_train(const Context& ctx, std::ostream& out) {
  const auto prep = load_prepared(ctx);
  const auto ck = pipeline::run_train(ctx.cfg, prep, [&](const trainer::TrainState& st, std::optional<double> taf1) {
    if (ctx.opts.quiet) return;
    const auto& h = st.history.back();
    out << "epoch " << h.epoch << " critic_loss " << h.critic_loss << " gp " << h.gp << " gen_loss " << h.gen_loss;
    if (taf1) out << " validation_taf1 " << *taf1;
    out << "\n";
  });
  checkpoint::save_checkpoint(ck, ctx.checkpoint_path());
  write_file(ctx.path("history.csv"), trainer::history_csv(ck.state.history));
  // A new model invalidates any earlier calibration.
  fs::remove(ctx.path("calibration.json"));
  out << "wrote " << ctx.checkpoint_path() << " (selected epoch " << ck.extra.value("selected_epoch", 0) << ")\n";
}

void cmd_calibrate(const Context& ctx, std::ostream& out) {
  const auto ck = checkpoint::load_checkpoint(ctx.checkpoint_path());
  const auto prep = load_prepared(ctx);
  const auto split = pipeline::split_test(prep.test, prep.validation_rows, ck.model.window);
  const auto calib = pipeline::run_calibrate(ck, ctx.cfg, split.validation);
  write_file(ctx.path("calibration.json"), pipeline::to_json(calib).dump(2) + "\n");
  out << "wrote " << ctx.path("calibration.json") << "\n";
}

void cmd_detect(const Context& ctx, std::ostream& out) {
  const auto ck = checkpoint::load_checkpoint(ctx.checkpoint_path());
  const auto calib = obtain_calibration(ctx, ck);
  detect::ScoreTrace trace;
  std::optional<std::vector<bool>> labels;
  if (ctx.opts.series) {
    // A raw series is normalized with the statistics stored in the checkpoint.
    const auto raw = data::load_csv(*ctx.opts.series, csv_options(ctx.cfg));
    data::NormalizationStats stats;
    const json& meta = ck.extra.at("preprocess");
    stats.feature_names = meta.at("features").get<std::vector<std::string>>();
    stats.min = meta.at("min").get<Vec>();
    stats.max = meta.at("max").get<Vec>();
    const auto series = data::minmax_apply(data::select_features(raw, stats.feature_names), stats);
    if (series.rows() < static_cast<std::size_t>(ck.model.window) + 1) {
      throw InputError("series of " + std::to_string(series.rows()) + " rows is shorter than w + 1 = " +
                       std::to_string(ck.model.window + 1));
    }
    trace = detect::decide(pipeline::score_slice(ck, ctx.cfg.detect, series, 0), calib, ctx.cfg.detect);
    labels = series.labels;
  } else {
    const auto prep = load_prepared(ctx);
    const auto split = pipeline::split_test(prep.test, prep.validation_rows, ck.model.window);
    trace = pipeline::run_detect(ck, ctx.cfg, split, calib);
    labels = prep.test.labels;
  }
  write_file(ctx.path("trace.csv"), detect::trace_csv(trace));
  write_file(ctx.path("trace.svg"), plot::trace_svg(trace, labels));
  const auto flagged = std::count(trace.anomaly.begin(), trace.anomaly.end(), true);
  out << "scored " << trace.size() << " steps, flagged " << flagged << "\n";
}

void cmd_evaluate(const Context& ctx, std::ostream& out) {
  const auto trace = pipeline::parse_trace_csv(read_file(ctx.opts.trace.value_or(ctx.path("trace.csv"))));
  const auto labels = labels_from(ctx.opts.labels.value_or(ctx.path("test.csv")), ctx.cfg);
  const auto report = pipeline::evaluate_trace(trace, labels);
  write_file(ctx.path("metrics.csv"), metrics::report_csv(report));
  write_file(ctx.path("metrics.json"), metrics::report_json(report));
  out << std::fixed << std::setprecision(4);
  out << "TaF1    eTaP    eTaR\n";
  out << report.taf1 << "  " << report.etap << "  " << report.etar << "\n";
}

void cmd_plot(const Context& ctx, std::ostream& out) {
  const auto trace = pipeline::parse_trace_csv(read_file(ctx.opts.trace.value_or(ctx.path("trace.csv"))));
  std::optional<std::vector<bool>> labels;
  const std::string label_path = ctx.opts.labels.value_or(ctx.path("test.csv"));
  if (ctx.opts.labels || fs::exists(label_path)) labels = labels_from(label_path, ctx.cfg);
  const std::string path = ctx.opts.out.value_or(ctx.path("trace.svg"));
  write_file(path, plot::trace_svg(trace, labels));
  out << "wrote " << path << "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid quantum-classical time-series anomaly detection", "qtsad"};
  app.require_subcommand(1, 1);
  Options opts;

  using Command = void (*)(const Context&, std::ostream&);
  struct Entry {
    const char* name;
    const char* help;
    Command fn;
    const char* out_help;
  };
  const Entry entries[] = {
      {"synth", "generate a labeled synthetic series", cmd_synth, "output CSV file (default <out_dir>/synth.csv)"},
      {"preprocess", "split, select features, normalize", cmd_preprocess, "output directory"},
      {"train", "train the generator and critic", cmd_train, "output directory"},
      {"calibrate", "fit score normalization on the validation slice", cmd_calibrate, "output directory"},
      {"detect", "score a series and write the trace and plot", cmd_detect, "output directory"},
      {"evaluate", "time-aware metrics of a trace", cmd_evaluate, "output directory"},
      {"plot", "render a trace as SVG", cmd_plot, "output SVG file (default <out_dir>/trace.svg)"},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", opts.config, "JSON configuration file");
    sub->add_option("--seed", opts.seed, "pipeline seed");
    sub->add_option("--out", opts.out, e.out_help);
    sub->add_option("--checkpoint", opts.checkpoint, "checkpoint file (default <out_dir>/model.ckpt)");
    const std::string name = e.name;
    if (name == "detect") sub->add_option("--series", opts.series, "raw CSV series to score instead of the test part");
    if (name == "evaluate" || name == "plot") {
      sub->add_option("--trace", opts.trace, "trace CSV (default <out_dir>/trace.csv)");
      sub->add_option("--labels", opts.labels, "labeled CSV indexed like the trace (default <out_dir>/test.csv)");
    }
    if (name == "train") sub->add_flag("--quiet", opts.quiet, "suppress per-epoch progress");
    subs.emplace_back(sub, e.fn);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    Context ctx;
    ctx.opts = opts;
    ctx.cfg = pipeline::load_config(opts.config, pipeline::process_overrides(), opts.seed);
    for (const auto& [sub, fn] : subs) {
      if (!sub->parsed()) continue;
      const bool out_is_file = std::string(sub->get_name()) == "synth" || std::string(sub->get_name()) == "plot";
      ctx.out_dir = (!out_is_file && opts.out) ? *opts.out : ctx.cfg.data.out_dir;
      fn(ctx, out);
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace qtsad::cli
