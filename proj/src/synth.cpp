// Synthetic process-like series: sinusoid mixtures with AR(1) noise per
// feature, plus labeled attacks built from four manipulation primitives. The
// sinusoids are shared process modes weighted per feature, so the features
// are coupled the way readings of one physical process are.
#include <algorithm>
#include <cmath>
#include <numbers>

#include "qtsad/data.hpp"
#include "qtsad/errors.hpp"
#include "qtsad/random.hpp"

namespace qtsad::data {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::LevelJump: return "level_jump";
    case AttackKind::Plateau: return "plateau";
    case AttackKind::Replay: return "replay";
    case AttackKind::Drift: return "drift";
  }
  return "unknown";
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "level_jump") return AttackKind::LevelJump;
  if (s == "plateau") return AttackKind::Plateau;
  if (s == "replay") return AttackKind::Replay;
  if (s == "drift") return AttackKind::Drift;
  throw ConfigError("unknown attack kind '" + s + "'");
}

void SynthSpec::validate() const {
  if (length < 2) throw ConfigError("synthetic series needs at least two steps");
  if (features < 1) throw ConfigError("synthetic series needs at least one feature");
  if (!(ar_coefficient > -1.0 && ar_coefficient < 1.0)) throw ConfigError("AR coefficient must lie in (-1, 1)");
  if (!(noise_scale >= 0.0)) throw ConfigError("noise scale must be non-negative");
  if (random_attacks < 0) throw ConfigError("random attack count must be non-negative");
  if (random_attacks > 0) {
    if (min_duration < 1 || max_duration < min_duration) throw ConfigError("invalid attack duration range");
    if (max_magnitude < min_magnitude) throw ConfigError("invalid attack magnitude range");
  }
  for (const auto& a : attacks) {
    if (a.length < 1 || a.start + a.length > length) throw ConfigError("explicit attack exceeds the series length");
    if (a.feature < 0 || a.feature >= features) throw ConfigError("explicit attack targets an unknown feature");
  }
}

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t T = spec.length;
  const auto d = static_cast<std::size_t>(spec.features);
  Rng rng(spec.seed);

  // Baseline.
  const double p1 = uniform(rng, 60.0, 200.0), p2 = uniform(rng, 12.0, 40.0);
  const double ph1 = uniform(rng, 0.0, 2.0 * std::numbers::pi), ph2 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const auto signed_amplitude = [&](double lo, double hi) {
    const double a = uniform(rng, lo, hi);
    return uniform01(rng) < 0.5 ? -a : a;
  };
  Matrix clean(T, d);
  Vec means(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double offset = uniform(rng, -0.5, 0.5);
    const double a1 = signed_amplitude(0.5, 0.7), a2 = signed_amplitude(0.15, 0.3);
    double e = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      e = spec.ar_coefficient * e + spec.noise_scale * standard_normal(rng);
      const double tt = static_cast<double>(t);
      clean(t, j) = offset + a1 * std::sin(2.0 * std::numbers::pi * tt / p1 + ph1) +
                    a2 * std::sin(2.0 * std::numbers::pi * tt / p2 + ph2) + e;
    }
    means[j] = offset;
  }

  // Attack placement.
  std::vector<AttackSpec> attacks = spec.attacks;
  if (spec.random_attacks > 0) {
    const auto n = static_cast<std::size_t>(spec.random_attacks);
    std::vector<std::size_t> dur(n);
    std::size_t need = 0;
    for (auto& v : dur) {
      v = spec.min_duration + uniform_index(rng, spec.max_duration - spec.min_duration + 1);
      need += v + spec.min_gap;
    }
    if (spec.attack_free_prefix + need > T) {
      throw ConfigError("attack budget of " + std::to_string(need) + " steps exceeds the available " +
                        std::to_string(T > spec.attack_free_prefix ? T - spec.attack_free_prefix : 0));
    }
    // Split the slack into n + 1 random gaps.
    const std::size_t slack = T - spec.attack_free_prefix - need;
    Vec cuts(n);
    for (double& c : cuts) c = uniform01(rng);
    std::sort(cuts.begin(), cuts.end());
    std::size_t cursor = spec.attack_free_prefix;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto target = static_cast<std::size_t>(cuts[i] * static_cast<double>(slack));
      cursor += spec.min_gap + (target - used);
      used = target;
      AttackSpec a;
      a.kind = static_cast<AttackKind>(i % 4);
      a.start = cursor;
      a.length = dur[i];
      a.feature = static_cast<int>(uniform_index(rng, d));
      // Random attacks push toward the feature mean so that the manipulated
      // values stay inside the normal operating range.
      const auto j = static_cast<std::size_t>(a.feature);
      const double toward_mean = clean(a.start, j) > means[j] ? -1.0 : 1.0;
      a.magnitude = toward_mean * uniform(rng, spec.min_magnitude, spec.max_magnitude);
      attacks.push_back(a);
      cursor += dur[i];
    }
  }
  std::sort(attacks.begin(), attacks.end(), [](const AttackSpec& a, const AttackSpec& b) { return a.start < b.start; });

  SynthResult res;
  res.table.values = clean;
  res.table.timestamps.resize(T);
  for (std::size_t t = 0; t < T; ++t) res.table.timestamps[t] = static_cast<double>(t);
  for (std::size_t j = 0; j < d; ++j) res.table.feature_names.push_back("f" + std::to_string(j));
  std::vector<bool> labels(T, false);

  Matrix& x = res.table.values;
  for (const auto& a : attacks) {
    const auto j = static_cast<std::size_t>(a.feature);
    for (std::size_t k = 0; k < a.length; ++k) {
      const std::size_t t = a.start + k;
      labels[t] = true;
      switch (a.kind) {
        case AttackKind::LevelJump:
          x(t, j) = clean(t, j) + a.magnitude;
          break;
        case AttackKind::Plateau:
          x(t, j) = means[j] + a.magnitude;
          break;
        case AttackKind::Replay: {
          // Replays an earlier stretch of the clean signal, shifted by half a
          // segment so the replayed phase disagrees with the live one.
          const std::size_t back = a.length + a.length / 2 + 1;
          const std::size_t src = a.start >= back ? a.start - back : 0;
          x(t, j) = clean(src + k, j);
          break;
        }
        case AttackKind::Drift:
          x(t, j) = clean(t, j) + a.magnitude * static_cast<double>(k + 1) / static_cast<double>(a.length);
          break;
      }
    }
  }
  res.table.labels = std::move(labels);
  res.attacks = std::move(attacks);
  return res;
}

}  // namespace qtsad::data
