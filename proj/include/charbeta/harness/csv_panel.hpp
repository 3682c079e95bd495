#pragma once

#include "charbeta/dgp_sim.hpp"
#include "charbeta/panel_core.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace charbeta {

// Long format, one row per (interval, asset):
//   interval_index,asset_id,dY,x_1..x_Kx[,f_1..f_K]
// Factor columns repeat the same values for every asset of an interval.

struct CsvSchema {
  int K_x = -1;  // -1: infer from the header
  int K = -1;    // factor columns; -1: infer, 0: none
  double delta_n = 1.0 / (252.0 * 78.0);
  bool drop_incomplete_assets = false;
};

struct IngestedPanel {
  IncrementPanel y;
  std::vector<Matrix> x;             // per interval, p × K_x
  std::optional<Matrix> f;           // K × n
  std::vector<long long> intervals;  // interval_index values in order
  std::vector<std::string> dropped;  // assets removed for missing intervals
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string where(std::size_t line, std::string_view column) {
  return "line " + std::to_string(line) + ", column '" + std::string(column) + "'";
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    if (s == "nan" || s == "NaN" || s == "NA" || s.empty())
      throw DataError("missing or NaN value at " + where(line, column));
    throw DataError("cannot parse number '" + std::string(s) + "' at " + where(line, column));
  }
  if (!std::isfinite(v)) throw DataError("non-finite value at " + where(line, column));
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace detail

inline IngestedPanel ingest_csv_panel(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("panel file '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = detail::split_commas(line);
  if (header.size() < 4 || header[0] != "interval_index" || header[1] != "asset_id" || header[2] != "dY")
    throw DataError("header must start with interval_index,asset_id,dY,x_1");
  int kx = 0, kf = 0;
  std::size_t c = 3;
  while (c < header.size() && header[c] == "x_" + std::to_string(kx + 1)) ++kx, ++c;
  while (c < header.size() && header[c] == "f_" + std::to_string(kf + 1)) ++kf, ++c;
  if (c != header.size()) throw DataError("unexpected header column '" + std::string(header[c]) + "'");
  if (kx < 1) throw DataError("header has no characteristic columns x_1..");
  if (schema.K_x >= 0 && schema.K_x != kx)
    throw DataError("header has " + std::to_string(kx) + " characteristic columns, expected " + std::to_string(schema.K_x));
  if (schema.K >= 0 && schema.K != kf)
    throw DataError("header has " + std::to_string(kf) + " factor columns, expected " + std::to_string(schema.K));

  struct Row {
    double dy;
    std::vector<double> x;
  };
  std::vector<long long> intervals;
  std::vector<std::size_t> interval_line;  // first line of each interval
  std::vector<std::unordered_map<std::string, Row>> rows;
  std::vector<std::vector<double>> factors;
  std::vector<std::string> assets;
  std::unordered_map<std::string, std::size_t> asset_pos;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(header.size()));
    long long t = 0;
    {
      const auto s = cells[0];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), t);
      if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("bad interval_index '" + std::string(s) + "' at line " + std::to_string(lineno));
    }
    if (intervals.empty() || t != intervals.back()) {
      if (!intervals.empty() && t < intervals.back())
        throw DataError("interval_index decreases at line " + std::to_string(lineno) + " (" + std::to_string(t) +
                        " after " + std::to_string(intervals.back()) + ")");
      if (!intervals.empty() && t != intervals.back() + 1)
        throw DataError("gap in interval_index at line " + std::to_string(lineno));
      intervals.push_back(t);
      interval_line.push_back(lineno);
      rows.emplace_back();
      factors.emplace_back();
    }
    const std::string asset(cells[1]);
    if (asset.empty()) throw DataError("empty asset_id at line " + std::to_string(lineno));
    Row r;
    r.dy = detail::parse_double(cells[2], lineno, "dY");
    for (int j = 0; j < kx; ++j)
      r.x.push_back(detail::parse_double(cells[static_cast<std::size_t>(3 + j)], lineno, header[static_cast<std::size_t>(3 + j)]));
    std::vector<double> f;
    for (int k = 0; k < kf; ++k) {
      const auto col = static_cast<std::size_t>(3 + kx + k);
      f.push_back(detail::parse_double(cells[col], lineno, header[col]));
    }
    if (factors.back().empty()) {
      factors.back() = std::move(f);
    } else if (factors.back() != f) {
      throw DataError("factor values at line " + std::to_string(lineno) + " differ from earlier rows of interval " +
                      std::to_string(t));
    }
    if (!asset_pos.count(asset)) {
      asset_pos.emplace(asset, assets.size());
      assets.push_back(asset);
    }
    if (!rows.back().emplace(asset, std::move(r)).second)
      throw DataError("duplicate asset '" + asset + "' in interval " + std::to_string(t) + " at line " +
                      std::to_string(lineno));
  }
  if (intervals.empty()) throw DataError("panel file '" + path + "' has no data rows");

  IngestedPanel out;
  std::vector<std::string> keep;
  for (const auto& a : assets) {
    std::size_t missing_at = rows.size();
    for (std::size_t i = 0; i < rows.size() && missing_at == rows.size(); ++i)
      if (!rows[i].count(a)) missing_at = i;
    if (missing_at == rows.size()) {
      keep.push_back(a);
    } else if (schema.drop_incomplete_assets) {
      out.dropped.push_back(a);
    } else {
      throw DataError("asset '" + a + "' has no row for interval " + std::to_string(intervals[missing_at]) +
                      " (interval starts at line " + std::to_string(interval_line[missing_at]) + ")");
    }
  }
  const auto p = static_cast<Eigen::Index>(keep.size());
  const auto n = static_cast<Eigen::Index>(intervals.size());
  if (p < 1) throw DataError("no asset is observed in every interval");
  Matrix y(p, n);
  out.x.assign(static_cast<std::size_t>(n), Matrix(p, kx));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index l = 0; l < p; ++l) {
      const Row& r = rows[static_cast<std::size_t>(i)].at(keep[static_cast<std::size_t>(l)]);
      y(l, i) = r.dy;
      for (int j = 0; j < kx; ++j) out.x[static_cast<std::size_t>(i)](l, j) = r.x[static_cast<std::size_t>(j)];
    }
  if (kf > 0) {
    Matrix f(kf, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < kf; ++k) f(k, i) = factors[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    out.f = std::move(f);
  }
  out.y = IncrementPanel(std::move(y), schema.delta_n, std::move(keep));
  out.intervals = std::move(intervals);
  return out;
}

/// Writes a panel in the long CSV layout; numbers use shortest round-trip form.
inline void export_csv_panel(const std::string& path, const IncrementPanel& y, const std::vector<Matrix>& x,
                             const Matrix* f = nullptr, long long first_interval = 1) {
  if (static_cast<int>(x.size()) != y.n()) throw ConfigError("export: one characteristic matrix per interval required");
  if (f && f->cols() != y.n()) throw ConfigError("export: factor increments must cover every interval");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write panel file '" + path + "'");
  const auto kx = x.front().cols();
  out << "interval_index,asset_id,dY";
  for (Eigen::Index j = 0; j < kx; ++j) out << ",x_" << j + 1;
  if (f)
    for (Eigen::Index k = 0; k < f->rows(); ++k) out << ",f_" << k + 1;
  out << '\n';
  for (int i = 0; i < y.n(); ++i)
    for (int l = 0; l < y.p(); ++l) {
      out << first_interval + i << ',' << y.asset_ids()[static_cast<std::size_t>(l)] << ','
          << detail::format_double(y.data()(l, i));
      for (Eigen::Index j = 0; j < kx; ++j) out << ',' << detail::format_double(x[static_cast<std::size_t>(i)](l, j));
      if (f)
        for (Eigen::Index k = 0; k < f->rows(); ++k) out << ',' << detail::format_double((*f)(k, i));
      out << '\n';
    }
  if (!out) throw DataError("failed while writing '" + path + "'");
}

inline void export_csv_panel(const std::string& path, const SimulatedPanel& sim, bool with_factors = true) {
  export_csv_panel(path, sim.y, sim.x, with_factors ? &sim.f : nullptr);
}

}  // namespace charbeta
