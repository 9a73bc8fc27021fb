// ============================================================================
// data.hpp - ingestion, normalization, windowing and data reduction
// ============================================================================
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qtsad/tensor.hpp"

namespace qtsad::data {

struct TimeSeriesTable {
  Vec timestamps;                       // strictly increasing
  Matrix values;                        // T x d
  std::vector<std::string> feature_names;
  std::optional<std::vector<bool>> labels;  // true = attack

  std::size_t rows() const { return values.rows; }
  std::size_t features() const { return values.cols; }
};

struct CsvOptions {
  std::string timestamp_column = "timestamp";  // absent column => row index
  std::string label_column = "label";          // absent column => no labels
  // Columns dropped besides the two above.
  std::vector<std::string> ignore_columns;
};

TimeSeriesTable load_csv(const std::string& path, const CsvOptions& opts = {});
TimeSeriesTable parse_csv(const std::string& text, const CsvOptions& opts = {});
// Writes timestamp, features and (if present) a `label` column.
void write_csv(const TimeSeriesTable& table, const std::string& path);
std::string format_csv(const TimeSeriesTable& table);

// Rows [begin, end) of a table.
TimeSeriesTable slice_rows(const TimeSeriesTable& table, std::size_t begin, std::size_t end);
// Keeps the named columns in the given order.
TimeSeriesTable select_features(const TimeSeriesTable& table, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormalizationStats {
  std::vector<std::string> feature_names;
  Vec min;
  Vec max;
};

NormalizationStats minmax_fit(const TimeSeriesTable& table);
// (x - min) / (max - min) clamped to [0, 1]; constant features map to 0.
TimeSeriesTable minmax_apply(const TimeSeriesTable& table, const NormalizationStats& stats);

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

enum class Provenance { Raw, ClusterCentroids };

// Each window is a (w + 1) x d matrix: w context rows then the target row.
struct WindowSet {
  int window = 0;  // w
  int features = 0;
  int stride = 1;
  Provenance provenance = Provenance::Raw;
  std::vector<Matrix> windows;
  std::vector<std::size_t> target_index;  // table row of each target (raw windows only)

  std::size_t size() const { return windows.size(); }
};

// Windows starting at rows 0, stride, 2*stride, ... that fit in the table.
WindowSet make_windows(const TimeSeriesTable& table, int w, int stride);

struct KMeansResult {
  WindowSet centroids;
  std::vector<std::size_t> assignment;  // per input window
  std::vector<std::size_t> counts;      // per centroid
  std::vector<double> wcss_history;     // within-cluster sum of squares per iteration
  int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 300;

// Lloyd's algorithm from k-means++ seeding over flattened windows.
KMeansResult kmeans(const WindowSet& windows, int n, std::uint64_t seed);
WindowSet kmeans_downsample(const WindowSet& windows, int n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Feature ranking
// ---------------------------------------------------------------------------

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 8;
  int min_samples_split = 2;
  // Features tried per split; 0 means round(sqrt(d)).
  int max_features = 0;
  std::uint64_t seed = 0;
};

struct FeatureImportance {
  std::string feature;
  double importance = 0.0;
};

// Random-forest mean decrease in Gini impurity, normalized to sum 1, sorted
// descending (ties broken by column order).
std::vector<FeatureImportance> gini_feature_importance(const TimeSeriesTable& table, const ForestConfig& cfg);

// ---------------------------------------------------------------------------
// Window size
// ---------------------------------------------------------------------------

// Maximal runs of attack labels as (start, length).
std::vector<std::pair<std::size_t, std::size_t>> attack_runs(const std::vector<bool>& labels);

// Probability-weighted geometric mean of the mean attack duration and the
// mean normal gap, before rounding.
double window_size_estimate(const std::vector<bool>& labels);
// round(window_size_estimate), at least 2.
int estimate_window_size(const std::vector<bool>& labels);

// ---------------------------------------------------------------------------
// Synthetic ICS-like series
// ---------------------------------------------------------------------------

enum class AttackKind { LevelJump, Plateau, Replay, Drift };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

// One attack on one feature. magnitude is a signed offset in raw feature
// units: the jump size, the plateau level relative to the feature's baseline
// mean, or the final drift offset. Replay ignores magnitude.
struct AttackSpec {
  AttackKind kind = AttackKind::LevelJump;
  std::size_t start = 0;
  std::size_t length = 1;
  int feature = 0;
  double magnitude = 0.4;
};

struct SynthSpec {
  std::size_t length = 1000;  // T
  int features = 4;           // d
  std::uint64_t seed = 0;
  double ar_coefficient = 0.8;
  double noise_scale = 0.03;
  // Explicit attacks (used as given) ...
  std::vector<AttackSpec> attacks;
  // ... plus randomly placed ones, cycling through the four kinds.
  int random_attacks = 0;
  std::size_t min_duration = 40;
  std::size_t max_duration = 150;
  double min_magnitude = 0.5;
  double max_magnitude = 0.9;
  // Random attacks are placed in [attack_free_prefix, length) with at least
  // min_gap normal steps between attacks.
  std::size_t attack_free_prefix = 0;
  std::size_t min_gap = 50;

  void validate() const;
};

struct SynthResult {
  TimeSeriesTable table;
  std::vector<AttackSpec> attacks;  // every injected attack, sorted by start
};

SynthResult synth_generate(const SynthSpec& spec);

}  // namespace qtsad::data
