// ============================================================================
// detect.hpp - gated anomaly scoring and adaptive thresholding
//
// Per timestep t >= w the generator forecasts (mu, logvar) for x_t from the
// w preceding rows. The interval-violation score S_iv gates the deeper
// diagnostics; where the gate is open the anomaly score
//   A = norm(S_topk) + norm(S_critic)
// is compared with a local adaptive threshold.
// ============================================================================
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qtsad/data.hpp"
#include "qtsad/model.hpp"

namespace qtsad::detect {

enum class ThresholdMode { CenteredOffline, CausalOnline };
// Full: gated composite score. IntervalOnly: the gate alone.
// CriticOnly / ReconstructionOnly: one normalized signal, no gate.
enum class ScoreMode { Full, IntervalOnly, CriticOnly, ReconstructionOnly };

std::string to_string(ThresholdMode m);
ThresholdMode threshold_mode_from_string(const std::string& s);
std::string to_string(ScoreMode m);
ScoreMode score_mode_from_string(const std::string& s);

struct DetectorConfig {
  double kappa = 2.0;
  int k_top = 3;
  double k_sens = 1.5;        // gate threshold multiplier
  double k_sens_final = 1.5;  // final decision threshold multiplier
  int threshold_window = 59;  // odd
  ThresholdMode mode = ThresholdMode::CenteredOffline;
  ScoreMode score_mode = ScoreMode::Full;
  // Score a reparameterized sample instead of mu when true.
  bool sample_xhat = false;
  std::uint64_t seed = 0;
  // Inference noise (off by default); trajectories are averaged when on.
  qsim::NoiseSpec noise;
  int noise_trajectories = 1;

  void validate(int features) const;
};

// mean of the k_top largest max(0, |x - mu| - kappa * sigma)
double interval_violation_score(std::span<const double> x, std::span<const double> mu,
                                std::span<const double> sigma, double kappa, int k_top);
// mean of the k_top largest (x - mu)^2
double topk_recon_error(std::span<const double> x, std::span<const double> mu, int k_top);
// -D(context, x_hat)
double critic_anomaly_score(const model::Critic& critic, const model::CriticParams& p, const Matrix& context,
                            std::span<const double> x_hat, const qsim::NoiseSpec& noise, Rng& rng);

struct CalibrationStats {
  double topk_min = 0, topk_max = 0;
  double critic_min = 0, critic_max = 0;
};

// (v - lo) / (hi - lo) clamped to [0, 1]; 0 when hi == lo.
double minmax_normalize(double v, double lo, double hi);

// Unthresholded per-timestep signals, rows aligned with t.
struct RawScores {
  std::vector<std::size_t> t;  // absolute row index in the scored series
  Vec s_iv;
  Vec s_topk;
  Vec s_critic;
  Vec mean_logvar;
  Matrix mu;      // rows x d
  Matrix logvar;  // rows x d
};

struct Models {
  const model::Generator& generator;
  const model::GeneratorParams& generator_params;
  const model::Critic& critic;
  const model::CriticParams& critic_params;
};

// Scores every t in [w, T). values is the normalized T x d series.
RawScores compute_raw_scores(const Matrix& values, const Models& models, const DetectorConfig& cfg);

// Naive forecaster mu_t = x_{t-1} with zero spread; only s_topk is populated.
RawScores last_timestep_scores(const Matrix& values, int w, int k_top);

CalibrationStats calibrate(const RawScores& validation);

// mean + k * population std of the segment.
double adaptive_threshold(std::span<const double> segment, double k_sens);
// Per-index thresholds over a whole trace. Centered windows are truncated at
// the ends; causal windows trail the index (the first index, with a single
// sample, gets +infinity).
Vec adaptive_thresholds(std::span<const double> trace, int window, double k_sens, ThresholdMode mode);

struct ScoreTrace {
  std::vector<std::size_t> t;
  Vec s_iv;
  Vec topk_raw, topk_norm;
  Vec critic_raw, critic_norm;
  Vec a;
  std::vector<bool> gate;
  std::vector<bool> anomaly;
  Vec mean_logvar;
  Vec gate_threshold, final_threshold;
  Matrix mu, logvar;

  std::size_t size() const { return t.size(); }
};

ScoreTrace decide(const RawScores& raw, const CalibrationStats& calib, const DetectorConfig& cfg);

ScoreTrace detect(const Matrix& values, const Models& models, const DetectorConfig& cfg,
                  const CalibrationStats& calib);

// Anomaly flags over a series of length T (rows before the first scored
// step are false).
std::vector<bool> pointwise_flags(const ScoreTrace& trace, std::size_t length);

std::string trace_csv(const ScoreTrace& trace);

}  // namespace qtsad::detect
