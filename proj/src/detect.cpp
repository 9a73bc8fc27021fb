#include "qtsad/detect.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>

#include "qtsad/errors.hpp"

namespace qtsad::detect {

namespace {

double mean_topk(Vec v, int k_top) {
  const auto k = static_cast<std::size_t>(k_top);
  if (k_top < 1 || k > v.size()) {
    throw ConfigError("k_top = " + std::to_string(k_top) + " must lie in [1, " + std::to_string(v.size()) + "]");
  }
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += v[i];
  return acc / static_cast<double>(k);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_string(ThresholdMode m) { return m == ThresholdMode::CenteredOffline ? "centered" : "causal"; }

ThresholdMode threshold_mode_from_string(const std::string& s) {
  if (s == "centered") return ThresholdMode::CenteredOffline;
  if (s == "causal") return ThresholdMode::CausalOnline;
  throw ConfigError("unknown threshold mode '" + s + "'");
}

std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::Full: return "full";
    case ScoreMode::IntervalOnly: return "interval_only";
    case ScoreMode::CriticOnly: return "critic_only";
    case ScoreMode::ReconstructionOnly: return "reconstruction_only";
  }
  return "unknown";
}

ScoreMode score_mode_from_string(const std::string& s) {
  if (s == "full") return ScoreMode::Full;
  if (s == "interval_only") return ScoreMode::IntervalOnly;
  if (s == "critic_only") return ScoreMode::CriticOnly;
  if (s == "reconstruction_only") return ScoreMode::ReconstructionOnly;
  throw ConfigError("unknown score mode '" + s + "'");
}

void DetectorConfig::validate(int features) const {
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  if (k_top < 1 || k_top > features) {
    throw ConfigError("k_top = " + std::to_string(k_top) + " must lie in [1, " + std::to_string(features) + "]");
  }
  if (!(k_sens >= 0.0) || !(k_sens_final >= 0.0)) throw ConfigError("threshold multipliers must be non-negative");
  if (threshold_window < 3 || threshold_window % 2 == 0) throw ConfigError("threshold window must be odd and >= 3");
  if (noise_trajectories < 1) throw ConfigError("noise trajectories must be positive");
  noise.validate();
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

double interval_violation_score(std::span<const double> x, std::span<const double> mu,
                                std::span<const double> sigma, double kappa, int k_top) {
  if (x.size() != mu.size() || x.size() != sigma.size()) throw ShapeError("interval score: length mismatch");
  Vec v(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) v[j] = std::max(0.0, std::abs(x[j] - mu[j]) - kappa * sigma[j]);
  return mean_topk(std::move(v), k_top);
}

double topk_recon_error(std::span<const double> x, std::span<const double> mu, int k_top) {
  if (x.size() != mu.size()) throw ShapeError("top-k error: length mismatch");
  Vec e(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) e[j] = (x[j] - mu[j]) * (x[j] - mu[j]);
  return mean_topk(std::move(e), k_top);
}

double critic_anomaly_score(const model::Critic& critic, const model::CriticParams& p, const Matrix& context,
                            std::span<const double> x_hat, const qsim::NoiseSpec& noise, Rng& rng) {
  return -critic.score(p, context, x_hat, noise, rng, nullptr);
}

double minmax_normalize(double v, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

RawScores compute_raw_scores(const Matrix& values, const Models& models, const DetectorConfig& cfg) {
  const auto& mcfg = models.generator.config();
  const auto w = static_cast<std::size_t>(mcfg.window);
  const auto d = static_cast<std::size_t>(mcfg.features);
  cfg.validate(mcfg.features);
  if (values.cols != d) throw ShapeError("series width does not match the model feature count");
  if (values.rows < w + 1) {
    throw InputError("series of length " + std::to_string(values.rows) + " is shorter than w+1 = " +
                     std::to_string(w + 1));
  }
  const std::size_t n = values.rows - w;
  const int trajectories = cfg.noise.enabled ? cfg.noise_trajectories : 1;
  RawScores r;
  r.mu = Matrix(n, d);
  r.logvar = Matrix(n, d);
  Matrix ctx(w, d);
  Vec eps(d, 0.0), sigma(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = i + w;
    std::copy_n(values.data.begin() + static_cast<std::ptrdiff_t>(i * d), w * d, ctx.data.begin());
    Rng rng(derive_seed(cfg.seed, t));
    Vec mu(d, 0.0), lv(d, 0.0), x_hat(d, 0.0);
    double critic_score = 0.0;
    for (int k = 0; k < trajectories; ++k) {
      if (cfg.sample_xhat) {
        for (double& e : eps) e = standard_normal(rng);
      }
      const auto out = models.generator.forward(models.generator_params, ctx, eps, cfg.noise, rng, nullptr);
      critic_score += critic_anomaly_score(models.critic, models.critic_params, ctx, out.x_hat, cfg.noise, rng);
      for (std::size_t j = 0; j < d; ++j) {
        mu[j] += out.gaussian.mu[j];
        lv[j] += out.gaussian.logvar[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(trajectories);
    double lv_sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] *= inv;
      lv[j] *= inv;
      sigma[j] = std::exp(0.5 * lv[j]);
      r.mu(i, j) = mu[j];
      r.logvar(i, j) = lv[j];
      lv_sum += lv[j];
    }
    const auto x = values.row(t);
    r.t.push_back(t);
    r.s_iv.push_back(interval_violation_score(x, mu, sigma, cfg.kappa, cfg.k_top));
    r.s_topk.push_back(topk_recon_error(x, mu, cfg.k_top));
    r.s_critic.push_back(critic_score * inv);
    r.mean_logvar.push_back(lv_sum / static_cast<double>(d));
  }
  return r;
}

RawScores last_timestep_scores(const Matrix& values, int w, int k_top) {
  const auto ww = static_cast<std::size_t>(w);
  const std::size_t d = values.cols;
  if (w < 1) throw ConfigError("window size must be positive");
  if (values.rows < ww + 1) throw InputError("series is shorter than w+1");
  const std::size_t n = values.rows - ww;
  RawScores r;
  r.mu = Matrix(n, d);
  r.logvar = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = i + ww;
    const auto prev = values.row(t - 1);
    std::copy(prev.begin(), prev.end(), r.mu.row(i).begin());
    r.t.push_back(t);
    r.s_iv.push_back(0.0);
    r.s_topk.push_back(topk_recon_error(values.row(t), prev, k_top));
    r.s_critic.push_back(0.0);
    r.mean_logvar.push_back(0.0);
  }
  return r;
}

CalibrationStats calibrate(const RawScores& validation) {
  if (validation.t.empty()) throw InputError("calibration needs a nonempty validation trace");
  CalibrationStats c;
  const auto [tmin, tmax] = std::minmax_element(validation.s_topk.begin(), validation.s_topk.end());
  const auto [cmin, cmax] = std::minmax_element(validation.s_critic.begin(), validation.s_critic.end());
  c.topk_min = *tmin;
  c.topk_max = *tmax;
  c.critic_min = *cmin;
  c.critic_max = *cmax;
  return c;
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

double adaptive_threshold(std::span<const double> segment, double k_sens) {
  if (segment.size() < 2) throw InputError("adaptive threshold needs at least two samples");
  const double n = static_cast<double>(segment.size());
  double mean = 0.0;
  for (double v : segment) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : segment) var += (v - mean) * (v - mean);
  return mean + k_sens * std::sqrt(var / n);
}

Vec adaptive_thresholds(std::span<const double> trace, int window, double k_sens, ThresholdMode mode) {
  if (window < 3) throw ConfigError("threshold window must be at least 3");
  const std::size_t n = trace.size();
  const auto w = static_cast<std::size_t>(window);
  Vec out(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t lo, hi;  // inclusive
    if (mode == ThresholdMode::CenteredOffline) {
      lo = t >= w / 2 ? t - w / 2 : 0;
      hi = std::min(n - 1, t + w / 2);
    } else {
      lo = t + 1 >= w ? t + 1 - w : 0;
      hi = t;
    }
    if (hi == lo) {
      out[t] = std::numeric_limits<double>::infinity();
      continue;
    }
    out[t] = adaptive_threshold(trace.subspan(lo, hi - lo + 1), k_sens);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decision
// ---------------------------------------------------------------------------

ScoreTrace decide(const RawScores& raw, const CalibrationStats& calib, const DetectorConfig& cfg) {
  const std::size_t n = raw.t.size();
  ScoreTrace tr;
  tr.t = raw.t;
  tr.s_iv = raw.s_iv;
  tr.topk_raw = raw.s_topk;
  tr.critic_raw = raw.s_critic;
  tr.mean_logvar = raw.mean_logvar;
  tr.mu = raw.mu;
  tr.logvar = raw.logvar;
  tr.topk_norm.resize(n);
  tr.critic_norm.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    tr.topk_norm[i] = minmax_normalize(raw.s_topk[i], calib.topk_min, calib.topk_max);
    tr.critic_norm[i] = minmax_normalize(raw.s_critic[i], calib.critic_min, calib.critic_max);
  }
  if (n == 0) return tr;

  const bool gated = cfg.score_mode == ScoreMode::Full || cfg.score_mode == ScoreMode::IntervalOnly;
  tr.gate.assign(n, true);
  tr.gate_threshold.assign(n, 0.0);
  if (gated) {
    tr.gate_threshold = adaptive_thresholds(tr.s_iv, cfg.threshold_window, cfg.k_sens, cfg.mode);
    for (std::size_t i = 0; i < n; ++i) tr.gate[i] = tr.s_iv[i] > tr.gate_threshold[i];
  }
  tr.a.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0;
    switch (cfg.score_mode) {
      case ScoreMode::Full: a = tr.topk_norm[i] + tr.critic_norm[i]; break;
      case ScoreMode::IntervalOnly: a = tr.s_iv[i]; break;
      case ScoreMode::CriticOnly: a = tr.critic_norm[i]; break;
      case ScoreMode::ReconstructionOnly: a = tr.topk_norm[i]; break;
    }
    tr.a[i] = tr.gate[i] ? a : 0.0;
  }
  tr.anomaly.assign(n, false);
  if (cfg.score_mode == ScoreMode::IntervalOnly) {
    tr.final_threshold = tr.gate_threshold;
    tr.anomaly = tr.gate;
  } else {
    tr.final_threshold = adaptive_thresholds(tr.a, cfg.threshold_window, cfg.k_sens_final, cfg.mode);
    for (std::size_t i = 0; i < n; ++i) tr.anomaly[i] = tr.gate[i] && tr.a[i] > tr.final_threshold[i];
  }
  return tr;
}

ScoreTrace detect(const Matrix& values, const Models& models, const DetectorConfig& cfg,
                  const CalibrationStats& calib) {
  return decide(compute_raw_scores(values, models, cfg), calib, cfg);
}

std::vector<bool> pointwise_flags(const ScoreTrace& trace, std::size_t length) {
  std::vector<bool> flags(length, false);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace.t[i] >= length) throw ShapeError("trace index beyond the series length");
    flags[trace.t[i]] = trace.anomaly[i];
  }
  return flags;
}

std::string trace_csv(const ScoreTrace& tr) {
  std::string out = "t,S_iv,S_topk_raw,S_topk_norm,S_critic_raw,S_critic_norm,A,gate,anomaly,mean_logvar\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    out += std::to_string(tr.t[i]) + "," + fmt(tr.s_iv[i]) + "," + fmt(tr.topk_raw[i]) + "," + fmt(tr.topk_norm[i]) +
           "," + fmt(tr.critic_raw[i]) + "," + fmt(tr.critic_norm[i]) + "," + fmt(tr.a[i]) + "," +
           (tr.gate[i] ? "1" : "0") + "," + (tr.anomaly[i] ? "1" : "0") + "," + fmt(tr.mean_logvar[i]) + "\n";
  }
  return out;
}

}  // namespace qtsad::detect
