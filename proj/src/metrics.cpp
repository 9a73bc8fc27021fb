#include "qtsad/metrics.hpp"

#include <algorithm>
#include <charconv>

#include "json.hpp"
#include "qtsad/errors.hpp"

namespace qtsad::metrics {

namespace {

std::size_t overlap(const Segment& s, const Segments& others) {
  std::size_t total = 0;
  for (const auto& o : others) {
    const std::size_t lo = std::max(s.first, o.first);
    const std::size_t hi = std::min(s.second, o.second);
    if (lo <= hi) total += hi - lo + 1;
  }
  return total;
}

// Mean over `from` of theta * [hit] + (1 - theta) * covered fraction.
double segment_score(const Segments& from, const Segments& against, double theta) {
  double acc = 0.0;
  for (const auto& s : from) {
    const std::size_t ov = overlap(s, against);
    const double len = static_cast<double>(s.second - s.first + 1);
    acc += theta * (ov > 0 ? 1.0 : 0.0) + (1.0 - theta) * static_cast<double>(ov) / len;
  }
  return acc / static_cast<double>(from.size());
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Segments segments_from_pointwise(const std::vector<bool>& flags) {
  Segments out;
  for (std::size_t i = 0; i < flags.size();) {
    if (!flags[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < flags.size() && flags[j + 1]) ++j;
    out.emplace_back(i, j);
    i = j + 1;
  }
  return out;
}

double etap(const Segments& pred, const Segments& truth, double theta) {
  if (pred.empty()) return truth.empty() ? 1.0 : 0.0;
  return segment_score(pred, truth, theta);
}

double etar(const Segments& pred, const Segments& truth, double theta) {
  if (truth.empty()) return 1.0;
  return segment_score(truth, pred, theta);
}

double taf1(double p, double r) {
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

PointPrf point_prf(const std::vector<bool>& flags, const std::vector<bool>& labels) {
  if (flags.size() != labels.size()) {
    throw ShapeError("prediction length " + std::to_string(flags.size()) + " does not match label length " +
                     std::to_string(labels.size()));
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] && labels[i]) ++tp;
    if (flags[i] && !labels[i]) ++fp;
    if (!flags[i] && labels[i]) ++fn;
  }
  PointPrf r;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

MetricReport evaluate(const std::vector<bool>& flags, const std::vector<bool>& labels, double theta) {
  const PointPrf p = point_prf(flags, labels);
  const Segments pred = segments_from_pointwise(flags), truth = segments_from_pointwise(labels);
  MetricReport r;
  r.etap = etap(pred, truth, theta);
  r.etar = etar(pred, truth, theta);
  r.taf1 = taf1(r.etap, r.etar);
  r.point_precision = p.precision;
  r.point_recall = p.recall;
  r.point_f1 = p.f1;
  return r;
}

std::string report_csv(const MetricReport& r) {
  return "taf1,etap,etar,point_precision,point_recall,point_f1\n" + fmt(r.taf1) + "," + fmt(r.etap) + "," +
         fmt(r.etar) + "," + fmt(r.point_precision) + "," + fmt(r.point_recall) + "," + fmt(r.point_f1) + "\n";
}

std::string report_json(const MetricReport& r) {
  const nlohmann::json j = {{"taf1", r.taf1},
                            {"etap", r.etap},
                            {"etar", r.etar},
                            {"point_precision", r.point_precision},
                            {"point_recall", r.point_recall},
                            {"point_f1", r.point_f1}};
  return j.dump(2) + "\n";
}

}  // namespace qtsad::metrics
