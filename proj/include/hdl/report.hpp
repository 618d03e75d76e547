#pragma once

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hdl/train.hpp"

namespace hdl {

struct ParsedMetrics {
  std::size_t num_levels = 0;
  std::vector<MetricsRecord> rows;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_strict_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw Error(format_msg(where, ": not a number: '", s, "'"));
  }
  HDL_CHECK(pos == s.size(), where, ": trailing characters in number '", s, "'");
  return v;
}

}  // namespace detail

// Strict reader for the training metrics schema
//   epoch,loss_total,loss_center,loss_l1..loss_lN,acc_l1..acc_lN,
//   violation_rate,path_acc,seconds
// The level count N is inferred from the header.
inline ParsedMetrics parse_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  HDL_CHECK(f.good(), "cannot open metrics file ", path);
  std::string line;
  HDL_CHECK(static_cast<bool>(std::getline(f, line)), "metrics file ", path, " is empty");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  const std::vector<std::string> header = detail::split_csv_line(line);
  HDL_CHECK(header.size() >= 8 && (header.size() - 6) % 2 == 0, path,
            ": header does not match the metrics schema");
  const std::size_t n = (header.size() - 6) / 2;
  std::ostringstream expect;
  write_metrics_header(expect, n);
  std::string expect_line = expect.str();
  expect_line.pop_back();  // trailing newline
  HDL_CHECK(line == expect_line, path, ": header does not match the metrics schema (got '", line,
            "')");

  ParsedMetrics pm;
  pm.num_levels = n;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cols = detail::split_csv_line(line);
    const std::string where = format_msg(path, ":", lineno);
    HDL_CHECK(cols.size() == header.size(), where, ": expected ", header.size(),
              " columns, got ", cols.size());
    MetricsRecord r;
    std::size_t c = 0;
    r.epoch = static_cast<int>(detail::parse_strict_double(cols[c++], where));
    r.loss_total = detail::parse_strict_double(cols[c++], where);
    r.loss_center = detail::parse_strict_double(cols[c++], where);
    for (std::size_t l = 0; l < n; ++l)
      r.loss_levels.push_back(detail::parse_strict_double(cols[c++], where));
    for (std::size_t l = 0; l < n; ++l)
      r.acc_levels.push_back(detail::parse_strict_double(cols[c++], where));
    r.violation_rate = detail::parse_strict_double(cols[c++], where);
    r.path_acc = detail::parse_strict_double(cols[c++], where);
    r.seconds = detail::parse_strict_double(cols[c++], where);
    pm.rows.push_back(std::move(r));
  }
  HDL_CHECK(!pm.rows.empty(), path, ": no data rows");
  return pm;
}

// Reshapes a metrics history into per-level loss curves: one epoch column,
// one loss column per level. Intended for plotting level-wise descent.
inline void write_plotdata(const ParsedMetrics& pm, std::ostream& os) {
  os << "epoch";
  for (std::size_t l = 1; l <= pm.num_levels; ++l) os << ",loss_l" << l;
  os << "\n";
  for (const auto& r : pm.rows) {
    os << r.epoch;
    for (double v : r.loss_levels) os << "," << format_fixed(v, 6);
    os << "\n";
  }
}

// Side-by-side accuracy report: one row per (method, level, lr), carrying the
// final-epoch test accuracy of each run.
struct ComparisonRow {
  std::string method;
  int level = 0;  // 1-based
  double lr = 0;
  double accuracy = 0;
};

inline void write_comparison(const std::vector<ComparisonRow>& rows, std::ostream& os) {
  os << "method,level,lr,accuracy\n";
  for (const auto& r : rows)
    os << r.method << "," << r.level << "," << format_fixed(r.lr, 6) << ","
       << format_fixed(r.accuracy, 6) << "\n";
}

// Rows contributed by one run's metrics history. A cascade run yields one row
// per level; a flat baseline yields only its target level.
inline std::vector<ComparisonRow> comparison_rows(const std::string& method,
                                                  const ParsedMetrics& pm, double lr,
                                                  int baseline_level = 0) {
  HDL_CHECK(baseline_level <= static_cast<int>(pm.num_levels), "comparison: level ",
            baseline_level, " out of range for ", pm.num_levels, "-level metrics");
  const MetricsRecord& last = pm.rows.back();
  std::vector<ComparisonRow> rows;
  for (std::size_t l = 0; l < pm.num_levels; ++l) {
    if (baseline_level > 0 && static_cast<int>(l + 1) != baseline_level) continue;
    rows.push_back({method, static_cast<int>(l + 1), lr, last.acc_levels[l]});
  }
  return rows;
}

}  // namespace hdl
