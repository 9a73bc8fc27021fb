// ============================================================================
// metrics.hpp - segment-aware and point-wise detection metrics
//
// A predicted segment p scores  theta * [p overlaps truth] +
// (1 - theta) * |p ∩ truth| / |p|;  eTaP is the mean over predicted
// segments. eTaR is the same construction over truth segments against the
// predictions. TaF1 is their harmonic mean.
// ============================================================================
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace qtsad::metrics {

// Inclusive [start, end] intervals, sorted and disjoint.
using Segment = std::pair<std::size_t, std::size_t>;
using Segments = std::vector<Segment>;

inline constexpr double kDefaultTheta = 0.5;

Segments segments_from_pointwise(const std::vector<bool>& flags);

double etap(const Segments& pred, const Segments& truth, double theta = kDefaultTheta);
double etar(const Segments& pred, const Segments& truth, double theta = kDefaultTheta);
double taf1(double etap, double etar);

struct PointPrf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

PointPrf point_prf(const std::vector<bool>& flags, const std::vector<bool>& labels);

struct MetricReport {
  double etap = 0, etar = 0, taf1 = 0;
  double point_precision = 0, point_recall = 0, point_f1 = 0;
};

MetricReport evaluate(const std::vector<bool>& flags, const std::vector<bool>& labels,
                      double theta = kDefaultTheta);

// Header and row with the field names
// taf1,etap,etar,point_precision,point_recall,point_f1.
std::string report_csv(const MetricReport& r);
std::string report_json(const MetricReport& r);

}  // namespace qtsad::metrics
