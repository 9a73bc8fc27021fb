#include "qtsad/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "qtsad/errors.hpp"
#include "qtsad/metrics.hpp"

namespace qtsad::plot {

namespace {

constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 30;
constexpr int kPanelGap = 40;

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Panel {
  double x0, x1, y0, y1;  // pixel box
  double t_lo, t_hi;      // data range on x
  double v_lo, v_hi;      // data range on y

  double px(double t) const { return x0 + (t - t_lo) / (t_hi - t_lo) * (x1 - x0); }
  double py(double v) const { return y1 - (v - v_lo) / (v_hi - v_lo) * (y1 - y0); }
};

std::pair<double, double> finite_range(const Vec& a, const Vec* b = nullptr) {
  double lo = INFINITY, hi = -INFINITY;
  const auto scan = [&](const Vec& v) {
    for (double x : v) {
      if (!std::isfinite(x)) continue;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  };
  scan(a);
  if (b) scan(*b);
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string polyline(const Panel& p, const std::vector<std::size_t>& t, const Vec& v, const std::string& style) {
  std::string out;
  if (v.size() != t.size()) return out;
  std::string pts;
  const auto flush = [&] {
    if (!pts.empty()) out += "<polyline fill=\"none\" " + style + " points=\"" + pts + "\"/>\n";
    pts.clear();
  };
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(v[i])) {
      flush();
      continue;
    }
    const double y = std::clamp(p.py(v[i]), p.y0, p.y1);
    pts += num(p.px(static_cast<double>(t[i]))) + "," + num(y) + " ";
  }
  flush();
  return out;
}

std::string axes(const Panel& p, const std::string& label) {
  std::string out;
  out += "<rect x=\"" + num(p.x0) + "\" y=\"" + num(p.y0) + "\" width=\"" + num(p.x1 - p.x0) + "\" height=\"" +
         num(p.y1 - p.y0) + "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  out += "<text x=\"" + num(p.x0) + "\" y=\"" + num(p.y0 - 6) + "\" font-size=\"12\">" + escape(label) + "</text>\n";
  for (double v : {p.v_lo, p.v_hi}) {
    out += "<text x=\"" + num(p.x0 - 6) + "\" y=\"" + num(p.py(v) + 4) +
           "\" font-size=\"10\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  for (double t : {p.t_lo, p.t_hi}) {
    out += "<text x=\"" + num(p.px(t)) + "\" y=\"" + num(p.y1 + 14) + "\" font-size=\"10\" text-anchor=\"middle\">" +
           num(t) + "</text>\n";
  }
  return out;
}

}  // namespace

std::string trace_svg(const detect::ScoreTrace& trace, const std::optional<std::vector<bool>>& labels,
                      const PlotOptions& opts) {
  if (trace.size() == 0) throw InputError("cannot plot an empty trace");
  const int height = kMarginTop + 2 * opts.panel_height + kPanelGap + 30;
  const double t_lo = static_cast<double>(trace.t.front());
  const double t_hi = std::max(t_lo + 1.0, static_cast<double>(trace.t.back()));

  const auto [a_lo, a_hi] = finite_range(trace.a, &trace.final_threshold);
  const auto [l_lo, l_hi] = finite_range(trace.mean_logvar);
  const double x0 = kMarginLeft, x1 = opts.width - kMarginRight;
  const Panel top{x0, x1, kMarginTop, static_cast<double>(kMarginTop + opts.panel_height), t_lo, t_hi, a_lo, a_hi};
  const double y2 = top.y1 + kPanelGap;
  const Panel bottom{x0, x1, y2, y2 + opts.panel_height, t_lo, t_hi, l_lo, l_hi};

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opts.width) +
                    "\" height=\"" + std::to_string(height) + "\" font-family=\"sans-serif\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(x0) + "\" y=\"16\" font-size=\"14\">" + escape(opts.title) + "</text>\n";

  if (labels) {
    std::vector<bool> window(labels->begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                                   trace.t.front(), labels->size())),
                             labels->begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(
                                                   trace.t.back() + 1, labels->size())));
    for (const auto& [s, e] : metrics::segments_from_pointwise(window)) {
      const double bs = t_lo + static_cast<double>(s) - 0.5, be = t_lo + static_cast<double>(e) + 0.5;
      for (const Panel* p : {&top, &bottom}) {
        const double l = std::max(p->x0, p->px(bs)), r = std::min(p->x1, p->px(be));
        out += "<rect x=\"" + num(l) + "\" y=\"" + num(p->y0) + "\" width=\"" + num(std::max(1.0, r - l)) +
               "\" height=\"" + num(p->y1 - p->y0) + "\" fill=\"#f4b6b6\" fill-opacity=\"0.6\"/>\n";
      }
    }
  }

  out += axes(top, "A(t) and final threshold");
  out += polyline(top, trace.t, trace.final_threshold, "stroke=\"#999\" stroke-width=\"1\" stroke-dasharray=\"4 3\"");
  out += polyline(top, trace.t, trace.a, "stroke=\"#1f4e9c\" stroke-width=\"1\"");
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (!trace.anomaly[i]) continue;
    out += "<circle cx=\"" + num(top.px(static_cast<double>(trace.t[i]))) + "\" cy=\"" +
           num(std::clamp(top.py(trace.a[i]), top.y0, top.y1)) + "\" r=\"1.5\" fill=\"#c0392b\"/>\n";
  }

  out += axes(bottom, "mean log-variance");
  out += polyline(bottom, trace.t, trace.mean_logvar, "stroke=\"#2e7d32\" stroke-width=\"1\"");
  out += "</svg>\n";
  return out;
}

}  // namespace qtsad::plot
