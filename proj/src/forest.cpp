// Random forest of depth-limited Gini classification trees, used only for
// its impurity-decrease feature importances.
#include <algorithm>
#include <cmath>
#include <numeric>

#include "qtsad/data.hpp"
#include "qtsad/errors.hpp"
#include "qtsad/random.hpp"

namespace qtsad::data {

namespace {

double gini(std::size_t pos, std::size_t n) {
  if (n == 0) return 0.0;
  const double p = static_cast<double>(pos) / static_cast<double>(n);
  return 2.0 * p * (1.0 - p);
}

struct TreeBuilder {
  const Matrix& x;
  const std::vector<bool>& y;
  const ForestConfig& cfg;
  std::size_t n_features_per_split;
  double n_root;
  Rng& rng;
  Vec& importance;

  void grow(std::vector<std::size_t>& idx, int depth) {
    const std::size_t n = idx.size();
    std::size_t pos = 0;
    for (std::size_t i : idx) pos += y[i] ? 1 : 0;
    const double node_gini = gini(pos, n);
    if (depth >= cfg.max_depth || n < static_cast<std::size_t>(cfg.min_samples_split) || node_gini == 0.0) return;

    // Random feature subset via a partial Fisher-Yates shuffle.
    std::vector<std::size_t> feats(x.cols);
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t i = 0; i < n_features_per_split; ++i) {
      const std::size_t j = i + uniform_index(rng, feats.size() - i);
      std::swap(feats[i], feats[j]);
    }

    double best_gain = 0.0;
    std::size_t best_feat = 0;
    double best_thr = 0.0;
    std::vector<std::size_t> order = idx;
    for (std::size_t fi = 0; fi < n_features_per_split; ++fi) {
      const std::size_t f = feats[fi];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
      std::size_t left_pos = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_pos += y[order[i]] ? 1 : 0;
        const double v = x(order[i], f), next = x(order[i + 1], f);
        if (v == next) continue;
        const std::size_t nl = i + 1, nr = n - nl;
        const double child = (static_cast<double>(nl) * gini(left_pos, nl) +
                              static_cast<double>(nr) * gini(pos - left_pos, nr)) /
                             static_cast<double>(n);
        const double gain = node_gini - child;
        if (gain > best_gain) {
          best_gain = gain;
          best_feat = f;
          best_thr = 0.5 * (v + next);
        }
      }
    }
    if (best_gain <= 0.0) return;
    importance[best_feat] += static_cast<double>(n) / n_root * best_gain;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (x(i, best_feat) <= best_thr ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    grow(left, depth + 1);
    grow(right, depth + 1);
  }
};

}  // namespace

std::vector<FeatureImportance> gini_feature_importance(const TimeSeriesTable& table, const ForestConfig& cfg) {
  if (!table.labels) throw InputError("feature ranking needs a labeled table");
  if (cfg.n_trees < 1 || cfg.max_depth < 1) throw ConfigError("forest needs positive tree count and depth");
  const auto& y = *table.labels;
  const std::size_t n = table.rows(), d = table.features();
  const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), true));
  if (pos == 0 || pos == n) throw InputError("feature ranking needs both normal and attack labels");

  std::size_t per_split = cfg.max_features > 0 ? static_cast<std::size_t>(cfg.max_features)
                                               : static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
  per_split = std::clamp<std::size_t>(per_split, 1, d);

  Vec total(d, 0.0);
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng(derive_seed(cfg.seed, t));
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = uniform_index(rng, n);
    Vec imp(d, 0.0);
    TreeBuilder builder{table.values, y, cfg, per_split, static_cast<double>(n), rng, imp};
    builder.grow(sample, 0);
    const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (s > 0.0) {
      for (std::size_t j = 0; j < d; ++j) total[j] += imp[j] / s;
    }
  }
  const double s = std::accumulate(total.begin(), total.end(), 0.0);
  std::vector<FeatureImportance> out;
  for (std::size_t j = 0; j < d; ++j) out.push_back({table.feature_names[j], s > 0.0 ? total[j] / s : 0.0});
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.importance > b.importance; });
  return out;
}

}  // namespace qtsad::data
