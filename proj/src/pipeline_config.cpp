#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "qtsad/errors.hpp"
#include "qtsad/json_reader.hpp"
#include "qtsad/pipeline.hpp"

extern char** environ;

namespace qtsad::pipeline {

using json_io::ObjectReader;
using nlohmann::json;

namespace {

template <class T>
T read_size(ObjectReader& r, const char* key, T def) {
  r.get(key, def);
  return def;
}

// Removes keys that the pipeline derives itself, rejecting them when a user
// supplies them.
json take_derived(json j, const std::string& where, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (j.contains(k)) throw ConfigError("'" + where + "." + k + "' is derived by the pipeline and cannot be set");
  }
  return j;
}

void erase_keys(json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
}

void collect_leaves(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
  for (const auto& [k, v] : j.items()) {
    std::string path = prefix.empty() ? k : prefix + "_" + k;
    if (v.is_object()) {
      collect_leaves(v, path, out);
    } else {
      std::string name = "QTSAD_";
      for (char c : path) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      out[name] = path;
    }
  }
}

json* leaf_at(json& root, const std::string& path) {
  // Keys may themselves contain '_', so walk the tree greedily matching the
  // longest key at each level.
  json* node = &root;
  std::size_t pos = 0;
  while (pos < path.size()) {
    if (!node->is_object()) return nullptr;
    std::string best;
    for (const auto& [k, v] : node->items()) {
      if (path.compare(pos, k.size(), k) == 0 && (pos + k.size() == path.size() || path[pos + k.size()] == '_') &&
          k.size() > best.size()) {
        best = k;
      }
    }
    if (best.empty()) return nullptr;
    node = &(*node)[best];
    pos += best.size() + 1;
  }
  return node;
}

json parse_override(const std::string& name, const std::string& text, const json& current) {
  try {
    if (current.is_string()) return text;
    if (current.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("");
    }
    json v = json::parse(text);
    if (current.is_number_integer() && !v.is_number_integer()) throw ConfigError("");
    if (current.is_number() && !v.is_number()) throw ConfigError("");
    if (current.is_array() && !v.is_array()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("environment override " + name + "='" + text + "' does not match the type of the setting");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Component sections
// ---------------------------------------------------------------------------

json to_json(const data::SynthSpec& s) {
  json attacks = json::array();
  for (const auto& a : s.attacks) {
    attacks.push_back({{"kind", data::to_string(a.kind)},
                       {"start", a.start},
                       {"length", a.length},
                       {"feature", a.feature},
                       {"magnitude", a.magnitude}});
  }
  return {{"length", s.length},
          {"features", s.features},
          {"ar_coefficient", s.ar_coefficient},
          {"noise_scale", s.noise_scale},
          {"attacks", attacks},
          {"random_attacks", s.random_attacks},
          {"min_duration", s.min_duration},
          {"max_duration", s.max_duration},
          {"min_magnitude", s.min_magnitude},
          {"max_magnitude", s.max_magnitude},
          {"attack_free_prefix", s.attack_free_prefix},
          {"min_gap", s.min_gap}};
}

data::SynthSpec synth_spec_from_json(const json& j) {
  ObjectReader r(j, "synth");
  data::SynthSpec s;
  // Signed reads so that negative sizes reach validation with a clear message.
  long long length = static_cast<long long>(s.length);
  r.get("length", length);
  if (length < 1) throw ConfigError("synth.length must be positive (got " + std::to_string(length) + ")");
  s.length = static_cast<std::size_t>(length);
  r.get("features", s.features);
  r.get("ar_coefficient", s.ar_coefficient);
  r.get("noise_scale", s.noise_scale);
  if (const json* a = r.child("attacks")) {
    if (!a->is_array()) throw ConfigError("synth.attacks must be an array");
    for (const auto& e : *a) {
      ObjectReader ar(e, "synth.attacks[]");
      data::AttackSpec spec;
      std::string kind = data::to_string(spec.kind);
      ar.get("kind", kind);
      spec.kind = data::attack_kind_from_string(kind);
      ar.get("start", spec.start);
      ar.get("length", spec.length);
      ar.get("feature", spec.feature);
      ar.get("magnitude", spec.magnitude);
      ar.finish();
      s.attacks.push_back(spec);
    }
  }
  r.get("random_attacks", s.random_attacks);
  r.get("min_duration", s.min_duration);
  r.get("max_duration", s.max_duration);
  r.get("min_magnitude", s.min_magnitude);
  r.get("max_magnitude", s.max_magnitude);
  r.get("attack_free_prefix", s.attack_free_prefix);
  r.get("min_gap", s.min_gap);
  r.finish();
  s.validate();
  return s;
}

json to_json(const detect::DetectorConfig& c) {
  return {{"kappa", c.kappa},
          {"k_top", c.k_top},
          {"k_sens", c.k_sens},
          {"k_sens_final", c.k_sens_final},
          {"threshold_window", c.threshold_window},
          {"mode", detect::to_string(c.mode)},
          {"score_mode", detect::to_string(c.score_mode)},
          {"sample_xhat", c.sample_xhat},
          {"noise", checkpoint::to_json(c.noise)},
          {"noise_trajectories", c.noise_trajectories}};
}

detect::DetectorConfig detector_config_from_json(const json& j) {
  ObjectReader r(j, "detect");
  detect::DetectorConfig c;
  r.get("kappa", c.kappa);
  r.get("k_top", c.k_top);
  r.get("k_sens", c.k_sens);
  r.get("k_sens_final", c.k_sens_final);
  r.get("threshold_window", c.threshold_window);
  std::string mode = detect::to_string(c.mode), score = detect::to_string(c.score_mode);
  r.get("mode", mode);
  r.get("score_mode", score);
  c.mode = detect::threshold_mode_from_string(mode);
  c.score_mode = detect::score_mode_from_string(score);
  r.get("sample_xhat", c.sample_xhat);
  if (const json* n = r.child("noise")) c.noise = checkpoint::noise_from_json(*n);
  r.get("noise_trajectories", c.noise_trajectories);
  r.finish();
  return c;
}

json to_json(const detect::CalibrationStats& c) {
  return {{"topk_min", c.topk_min}, {"topk_max", c.topk_max}, {"critic_min", c.critic_min},
          {"critic_max", c.critic_max}};
}

detect::CalibrationStats calibration_from_json(const json& j) {
  ObjectReader r(j, "calibration");
  detect::CalibrationStats c;
  r.get("topk_min", c.topk_min);
  r.get("topk_max", c.topk_max);
  r.get("critic_min", c.critic_min);
  r.get("critic_max", c.critic_max);
  r.finish();
  if (c.topk_max < c.topk_min || c.critic_max < c.critic_min) throw ConfigError("calibration max below min");
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline config
// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (data.out_dir.empty()) throw ConfigError("data.out_dir must not be empty");
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction must lie in (0, 1)");
  }
  if (!(split.validation_fraction > 0.0 && split.validation_fraction < 1.0)) {
    throw ConfigError("split.validation_fraction must lie in (0, 1)");
  }
  if (features.count < 0) throw ConfigError("features.count must be non-negative");
  if (features.n_trees < 1 || features.max_depth < 1) throw ConfigError("features forest sizes must be positive");
  if (!window.estimate && window.size < 1) throw ConfigError("window.size must be positive");
  if (window.train_stride < 0) throw ConfigError("window.train_stride must be non-negative");
  if (n_clusters < 0) throw ConfigError("n_clusters must be non-negative");
  if (selection.every < 1) throw ConfigError("selection.every must be positive");
  model::ModelConfig m = model;
  m.features = std::max(1, m.features);
  m.window = std::max(1, window.size);
  m.validate();
  train.validate();
  detect.validate(std::max(detect.k_top, 1));
  synth.validate();
}

json to_json(const PipelineConfig& c) {
  json model = checkpoint::to_json(c.model);
  erase_keys(model, {"features", "window"});
  json train = checkpoint::to_json(c.train);
  erase_keys(train, {"seed"});
  erase_keys(train["noise"], {"seed"});
  json det = to_json(c.detect);
  erase_keys(det["noise"], {"seed"});
  return {{"data",
           {{"input", c.data.input},
            {"out_dir", c.data.out_dir},
            {"timestamp_column", c.data.timestamp_column},
            {"label_column", c.data.label_column},
            {"ignore_columns", c.data.ignore_columns}}},
          {"split", {{"train_fraction", c.split.train_fraction}, {"validation_fraction", c.split.validation_fraction}}},
          {"features", {{"count", c.features.count}, {"n_trees", c.features.n_trees}, {"max_depth", c.features.max_depth}}},
          {"window", {{"estimate", c.window.estimate}, {"size", c.window.size}, {"train_stride", c.window.train_stride}}},
          {"n_clusters", c.n_clusters},
          {"model", model},
          {"train", train},
          {"selection", {{"enabled", c.selection.enabled}, {"every", c.selection.every}}},
          {"detect", det},
          {"synth", to_json(c.synth)},
          {"seed", c.seed}};
}

PipelineConfig config_from_json(const json& j) {
  ObjectReader r(j, "config");
  PipelineConfig c;
  if (const json* d = r.child("data")) {
    ObjectReader dr(*d, "data");
    dr.get("input", c.data.input);
    dr.get("out_dir", c.data.out_dir);
    dr.get("timestamp_column", c.data.timestamp_column);
    dr.get("label_column", c.data.label_column);
    dr.get("ignore_columns", c.data.ignore_columns);
    dr.finish();
  }
  if (const json* s = r.child("split")) {
    ObjectReader sr(*s, "split");
    sr.get("train_fraction", c.split.train_fraction);
    sr.get("validation_fraction", c.split.validation_fraction);
    sr.finish();
  }
  if (const json* f = r.child("features")) {
    ObjectReader fr(*f, "features");
    fr.get("count", c.features.count);
    fr.get("n_trees", c.features.n_trees);
    fr.get("max_depth", c.features.max_depth);
    fr.finish();
  }
  if (const json* w = r.child("window")) {
    ObjectReader wr(*w, "window");
    wr.get("estimate", c.window.estimate);
    wr.get("size", c.window.size);
    wr.get("train_stride", c.window.train_stride);
    wr.finish();
  }
  c.n_clusters = read_size(r, "n_clusters", c.n_clusters);
  if (const json* m = r.child("model")) c.model = checkpoint::model_config_from_json(take_derived(*m, "model", {"features", "window"}));
  if (const json* t = r.child("train")) {
    json tj = take_derived(*t, "train", {"seed"});
    if (tj.contains("noise")) tj["noise"] = take_derived(tj["noise"], "train.noise", {"seed"});
    c.train = checkpoint::train_config_from_json(tj);
  }
  if (const json* s = r.child("selection")) {
    ObjectReader sr(*s, "selection");
    sr.get("enabled", c.selection.enabled);
    sr.get("every", c.selection.every);
    sr.finish();
  }
  if (const json* d = r.child("detect")) {
    json dj = *d;
    if (dj.is_object() && dj.contains("noise")) dj["noise"] = take_derived(dj["noise"], "detect.noise", {"seed"});
    c.detect = detector_config_from_json(dj);
  }
  if (const json* s = r.child("synth")) c.synth = synth_spec_from_json(*s);
  r.get("seed", c.seed);
  r.finish();

  const StageSeeds seeds = stage_seeds(c.seed);
  c.synth.seed = seeds.synth;
  c.train.seed = seeds.train;
  c.train.noise.seed = seeds.noise;
  c.detect.seed = seeds.detect;
  c.detect.noise.seed = seeds.noise;
  c.validate();
  return c;
}

StageSeeds stage_seeds(std::uint64_t seed) {
  return {seed,
          derive_seed(seed, 1),
          derive_seed(seed, 2),
          derive_seed(seed, 3),
          derive_seed(seed, 4),
          derive_seed(seed, 5)};
}

void apply_env_overrides(json& config_json, const std::vector<std::pair<std::string, std::string>>& env) {
  std::map<std::string, std::string> leaves;
  collect_leaves(config_json, "", leaves);
  for (const auto& [name, value] : env) {
    const auto it = leaves.find(name);
    if (it == leaves.end()) throw ConfigError("unknown configuration override " + name);
    json* leaf = leaf_at(config_json, it->second);
    if (!leaf) throw ConfigError("unknown configuration override " + name);
    *leaf = parse_override(name, value, *leaf);
  }
}

std::vector<std::pair<std::string, std::string>> process_overrides() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind("QTSAD_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

PipelineConfig load_config(const std::optional<std::string>& path,
                           const std::vector<std::pair<std::string, std::string>>& env,
                           std::optional<std::uint64_t> seed) {
  json merged = to_json(PipelineConfig{});
  if (path) {
    std::ifstream in(*path);
    if (!in) throw InputError("cannot open config file '" + *path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json file;
    try {
      file = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ParseError("config file '" + *path + "': " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file '" + *path + "' must hold a JSON object");
    merged.merge_patch(file);
  }
  apply_env_overrides(merged, env);
  if (seed) merged["seed"] = *seed;
  return config_from_json(merged);
}

}  // namespace qtsad::pipeline
