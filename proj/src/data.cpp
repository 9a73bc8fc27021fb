#include "qtsad/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "qtsad/errors.hpp"
#include "qtsad/random.hpp"

namespace qtsad::data {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

TimeSeriesTable parse_csv(const std::string& text, const CsvOptions& opts) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("csv: missing header row");

  int ts_col = -1, label_col = -1;
  std::vector<std::size_t> feature_cols;
  TimeSeriesTable table;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == opts.timestamp_column) {
      ts_col = static_cast<int>(c);
    } else if (name == opts.label_column) {
      label_col = static_cast<int>(c);
    } else if (std::find(opts.ignore_columns.begin(), opts.ignore_columns.end(), name) == opts.ignore_columns.end()) {
      feature_cols.push_back(c);
      table.feature_names.push_back(name);
    }
  }
  if (feature_cols.empty()) throw ParseError("csv: no feature columns in header");

  std::vector<double> values;
  std::vector<bool> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("csv: row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    }
    const std::size_t row = table.timestamps.size();
    double ts = static_cast<double>(row);
    if (ts_col >= 0 && !parse_double(cells[static_cast<std::size_t>(ts_col)], ts)) {
      throw ParseError("csv: row " + std::to_string(line_no) + ": non-numeric timestamp '" +
                       cells[static_cast<std::size_t>(ts_col)] + "'");
    }
    if (!table.timestamps.empty() && !(ts > table.timestamps.back())) {
      throw ParseError("csv: row " + std::to_string(line_no) + ": timestamps must be strictly increasing");
    }
    table.timestamps.push_back(ts);
    for (std::size_t c : feature_cols) {
      double v = 0.0;
      if (!parse_double(cells[c], v)) {
        throw ParseError("csv: row " + std::to_string(line_no) + ", column '" + header[c] + "': non-numeric cell '" +
                         cells[c] + "'");
      }
      values.push_back(v);
    }
    if (label_col >= 0) {
      const std::string& cell = cells[static_cast<std::size_t>(label_col)];
      if (cell == "0") {
        labels.push_back(false);
      } else if (cell == "1") {
        labels.push_back(true);
      } else {
        throw ParseError("csv: row " + std::to_string(line_no) + ": label must be 0 or 1, got '" + cell + "'");
      }
    }
  }
  table.values.rows = table.timestamps.size();
  table.values.cols = feature_cols.size();
  table.values.data = std::move(values);
  if (label_col >= 0) table.labels = std::move(labels);
  return table;
}

TimeSeriesTable load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), opts);
}

std::string format_csv(const TimeSeriesTable& table) {
  std::string out = "timestamp";
  for (const auto& n : table.feature_names) out += "," + n;
  if (table.labels) out += ",label";
  out += "\n";
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out += format_double(table.timestamps[r]);
    for (double v : table.values.row(r)) {
      out += ',';
      out += format_double(v);
    }
    if (table.labels) out += (*table.labels)[r] ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void write_csv(const TimeSeriesTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << format_csv(table);
}

TimeSeriesTable slice_rows(const TimeSeriesTable& table, std::size_t begin, std::size_t end) {
  if (begin > end || end > table.rows()) throw InputError("slice_rows: range out of bounds");
  TimeSeriesTable out;
  out.feature_names = table.feature_names;
  out.timestamps.assign(table.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        table.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.values = Matrix(end - begin, table.features());
  std::copy(table.values.data.begin() + static_cast<std::ptrdiff_t>(begin * table.features()),
            table.values.data.begin() + static_cast<std::ptrdiff_t>(end * table.features()), out.values.data.begin());
  if (table.labels) {
    out.labels = std::vector<bool>(table.labels->begin() + static_cast<std::ptrdiff_t>(begin),
                                   table.labels->begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

TimeSeriesTable select_features(const TimeSeriesTable& table, const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    const auto it = std::find(table.feature_names.begin(), table.feature_names.end(), n);
    if (it == table.feature_names.end()) throw InputError("unknown feature '" + n + "'");
    cols.push_back(static_cast<std::size_t>(it - table.feature_names.begin()));
  }
  TimeSeriesTable out;
  out.timestamps = table.timestamps;
  out.labels = table.labels;
  out.feature_names = names;
  out.values = Matrix(table.rows(), cols.size());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) out.values(r, j) = table.values(r, cols[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

NormalizationStats minmax_fit(const TimeSeriesTable& table) {
  if (table.rows() == 0) throw InputError("minmax_fit: empty table");
  const std::size_t d = table.features();
  NormalizationStats s{table.feature_names, Vec(d, std::numeric_limits<double>::infinity()),
                       Vec(d, -std::numeric_limits<double>::infinity())};
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      s.min[j] = std::min(s.min[j], table.values(r, j));
      s.max[j] = std::max(s.max[j], table.values(r, j));
    }
  }
  return s;
}

TimeSeriesTable minmax_apply(const TimeSeriesTable& table, const NormalizationStats& stats) {
  const std::size_t d = table.features();
  if (stats.min.size() != d || stats.max.size() != d) throw ShapeError("minmax_apply: stats do not match table width");
  if (!stats.feature_names.empty() && stats.feature_names != table.feature_names) {
    throw InputError("minmax_apply: normalization stats were fitted on different features");
  }
  TimeSeriesTable out = table;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const double range = stats.max[j] - stats.min[j];
      double v = range > 0.0 ? (table.values(r, j) - stats.min[j]) / range : 0.0;
      out.values(r, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

WindowSet make_windows(const TimeSeriesTable& table, int w, int stride) {
  if (w < 1) throw ConfigError("window size must be positive");
  if (stride < 1) throw ConfigError("window stride must be positive");
  const std::size_t span = static_cast<std::size_t>(w) + 1;
  if (table.rows() < span) {
    throw InputError("series of length " + std::to_string(table.rows()) + " is shorter than w+1 = " +
                     std::to_string(span));
  }
  const std::size_t d = table.features();
  WindowSet ws;
  ws.window = w;
  ws.features = static_cast<int>(d);
  ws.stride = stride;
  for (std::size_t start = 0; start + span <= table.rows(); start += static_cast<std::size_t>(stride)) {
    Matrix m(span, d);
    std::copy_n(table.values.data.begin() + static_cast<std::ptrdiff_t>(start * d), span * d, m.data.begin());
    ws.windows.push_back(std::move(m));
    ws.target_index.push_back(start + static_cast<std::size_t>(w));
  }
  return ws;
}

KMeansResult kmeans(const WindowSet& windows, int n, std::uint64_t seed) {
  const std::size_t N = windows.size();
  if (n < 1) throw ConfigError("number of clusters must be positive");
  const auto k = static_cast<std::size_t>(n);
  if (k > N) {
    throw InputError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(N) + " windows");
  }
  const std::size_t dim = windows.windows[0].data.size();
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<Vec> centers;
  centers.push_back(windows.windows[uniform_index(rng, N)].data);
  Vec nearest(N, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(windows.windows[i].data, centers.back()));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        if (nearest[i] == 0.0) continue;
        pick = i;
        acc += nearest[i];
        if (acc > target) break;
      }
    } else {
      pick = uniform_index(rng, N);
    }
    centers.push_back(windows.windows[pick].data);
  }

  KMeansResult res;
  res.assignment.assign(N, k);
  for (int it = 0; it < kKMeansMaxIterations; ++it) {
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = squared_distance(windows.windows[i].data, centers[c]);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      wcss += best_d;
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    res.wcss_history.push_back(wcss);
    res.iterations = it + 1;
    if (!changed) break;
    std::vector<Vec> sums(k, Vec(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      for (std::size_t e = 0; e < dim; ++e) sums[c][e] += windows.windows[i].data[e];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // an empty cluster keeps its centroid
      for (std::size_t e = 0; e < dim; ++e) centers[c][e] = sums[c][e] / static_cast<double>(counts[c]);
    }
  }

  res.counts.assign(k, 0);
  for (std::size_t c : res.assignment) ++res.counts[c];
  res.centroids.window = windows.window;
  res.centroids.features = windows.features;
  res.centroids.stride = windows.stride;
  res.centroids.provenance = Provenance::ClusterCentroids;
  const std::size_t rows = windows.windows[0].rows, cols = windows.windows[0].cols;
  for (auto& c : centers) {
    Matrix m(rows, cols);
    m.data = std::move(c);
    res.centroids.windows.push_back(std::move(m));
  }
  return res;
}

WindowSet kmeans_downsample(const WindowSet& windows, int n, std::uint64_t seed) {
  return kmeans(windows, n, seed).centroids;
}

// ---------------------------------------------------------------------------
// Window size
// ---------------------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> attack_runs(const std::vector<bool>& labels) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < labels.size();) {
    if (!labels[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < labels.size() && labels[j]) ++j;
    runs.emplace_back(i, j - i);
    i = j;
  }
  return runs;
}

double window_size_estimate(const std::vector<bool>& labels) {
  const auto runs = attack_runs(labels);
  if (runs.empty()) throw InputError("window size estimation needs at least one attack segment");
  const double n = static_cast<double>(labels.size());
  const double a = static_cast<double>(runs.size());
  double total = 0.0;
  for (const auto& r : runs) total += static_cast<double>(r.second);
  if (total >= n) throw InputError("window size estimation needs at least one normal step");
  const double mu_d = total / a;
  const double p = a * mu_d / n;
  const double gap = n / a - mu_d;
  return std::pow(mu_d, p) * std::pow(gap, 1.0 - p);
}

int estimate_window_size(const std::vector<bool>& labels) {
  return std::max(2, static_cast<int>(std::lround(window_size_estimate(labels))));
}

}  // namespace qtsad::data
