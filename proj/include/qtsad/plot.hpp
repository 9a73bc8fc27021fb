// ============================================================================
// plot.hpp - dependency-free SVG rendering of score traces
//
// Two stacked panels share the time axis: the anomaly score A(t) with its
// final threshold, and the mean forecast log-variance. Ground-truth attack
// segments are drawn as shaded bands behind both panels.
// ============================================================================
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qtsad/detect.hpp"

namespace qtsad::plot {

struct PlotOptions {
  std::string title = "anomaly score";
  int width = 1000;
  int panel_height = 220;
};

// labels, when present, are indexed by absolute row (trace.t values).
std::string trace_svg(const detect::ScoreTrace& trace, const std::optional<std::vector<bool>>& labels,
                      const PlotOptions& opts = {});

}  // namespace qtsad::plot
