#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hdl/common.hpp"

namespace hdl {

// One class per level, ordered by level.
using LabelPath = std::vector<std::int64_t>;

struct LevelSpec {
  std::string name;
  std::vector<std::string> classes;
};

// Class hierarchy: ordered levels plus the valid parent->child edges between
// consecutive levels. Level order is taken verbatim from the file; it need
// not be coarse-to-fine. Immutable after load.
class Taxonomy {
 public:
  static Taxonomy load(const std::string& path) {
    std::ifstream f(path);
    HDL_CHECK(f.good(), "cannot open taxonomy file ", path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  static Taxonomy parse(const std::string& text, const std::string& source = "<string>") {
    Taxonomy tax;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    struct PendingEdge {
      std::string parent, child;
      int lineno;
    };
    std::vector<PendingEdge> pending;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string stripped = strip(line.substr(0, line.find('#')));
      if (stripped.empty()) continue;
      if (stripped.rfind("level ", 0) == 0) {
        const auto colon = stripped.find(':');
        HDL_CHECK(colon != std::string::npos, source, ":", lineno, ": level line missing ':'");
        LevelSpec level;
        level.name = strip(stripped.substr(6, colon - 6));
        HDL_CHECK(!level.name.empty(), source, ":", lineno, ": empty level name");
        for (const auto& existing : tax.levels_)
          HDL_CHECK(existing.name != level.name, source, ":", lineno, ": duplicate level '",
                    level.name, "'");
        std::istringstream cls(stripped.substr(colon + 1));
        std::string token;
        while (std::getline(cls, token, ',')) {
          token = strip(token);
          HDL_CHECK(!token.empty(), source, ":", lineno, ": empty class name in level '",
                    level.name, "'");
          HDL_CHECK(std::find(level.classes.begin(), level.classes.end(), token) ==
                        level.classes.end(),
                    source, ":", lineno, ": duplicate class '", token, "' in level '", level.name,
                    "'");
          level.classes.push_back(token);
        }
        HDL_CHECK(!level.classes.empty(), source, ":", lineno, ": level '", level.name,
                  "' declares no classes");
        tax.levels_.push_back(std::move(level));
      } else if (stripped.rfind("edge ", 0) == 0) {
        const auto arrow = stripped.find("->");
        HDL_CHECK(arrow != std::string::npos, source, ":", lineno, ": edge line missing '->'");
        pending.push_back(
            {strip(stripped.substr(5, arrow - 5)), strip(stripped.substr(arrow + 2)), lineno});
      } else {
        throw Error(format_msg(source, ":", lineno, ": unrecognized directive: ", stripped));
      }
    }
    HDL_CHECK(tax.levels_.size() >= 1, source, ": taxonomy declares no levels");

    tax.edges_.assign(tax.levels_.size() > 1 ? tax.levels_.size() - 1 : 0, {});
    for (std::size_t l = 0; l + 1 < tax.levels_.size(); ++l)
      tax.edges_[l].assign(
          tax.levels_[l].classes.size(),
          std::vector<bool>(tax.levels_[l + 1].classes.size(), false));

    for (const auto& e : pending) {
      // An edge resolves to a unique (level l parent, level l+1 child) pair.
      int found_level = -1;
      std::int64_t pi = -1, ci = -1;
      for (std::size_t l = 0; l + 1 < tax.levels_.size(); ++l) {
        const std::int64_t p = tax.class_index_or(-1, l, e.parent);
        const std::int64_t c = tax.class_index_or(-1, l + 1, e.child);
        if (p >= 0 && c >= 0) {
          HDL_CHECK(found_level < 0, source, ":", e.lineno, ": edge '", e.parent, " -> ", e.child,
                    "' is ambiguous: matches levels ", tax.levels_[found_level].name, "->",
                    tax.levels_[found_level + 1].name, " and ", tax.levels_[l].name, "->",
                    tax.levels_[l + 1].name);
          found_level = static_cast<int>(l);
          pi = p;
          ci = c;
        }
      }
      HDL_CHECK(found_level >= 0, source, ":", e.lineno, ": dangling edge '", e.parent, " -> ",
                e.child, "': no consecutive levels contain these classes");
      tax.edges_[static_cast<std::size_t>(found_level)][static_cast<std::size_t>(pi)]
                [static_cast<std::size_t>(ci)] = true;
    }

    tax.validate(source);
    return tax;
  }

  std::size_t num_levels() const { return levels_.size(); }
  const std::vector<LevelSpec>& levels() const { return levels_; }
  const LevelSpec& level(std::size_t l) const { return levels_[l]; }

  std::int64_t class_index(std::size_t level, const std::string& name) const {
    const std::int64_t idx = class_index_or(-1, level, name);
    HDL_CHECK(idx >= 0, "class '", name, "' not found in level '", levels_[level].name, "'");
    return idx;
  }

  bool is_valid_path(const LabelPath& path) const {
    if (path.size() != levels_.size()) return false;
    for (std::size_t l = 0; l < levels_.size(); ++l)
      if (path[l] < 0 || path[l] >= static_cast<std::int64_t>(levels_[l].classes.size()))
        return false;
    for (std::size_t l = 0; l + 1 < levels_.size(); ++l)
      if (!edges_[l][static_cast<std::size_t>(path[l])][static_cast<std::size_t>(path[l + 1])])
        return false;
    return true;
  }

  // Number of valid full label paths, by forward DP over the edge layers.
  std::uint64_t count_valid_paths() const {
    std::vector<std::uint64_t> ways(levels_[0].classes.size(), 1);
    for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
      std::vector<std::uint64_t> next(levels_[l + 1].classes.size(), 0);
      for (std::size_t a = 0; a < ways.size(); ++a)
        for (std::size_t b = 0; b < next.size(); ++b)
          if (edges_[l][a][b]) next[b] += ways[a];
      ways = std::move(next);
    }
    std::uint64_t total = 0;
    for (std::uint64_t w : ways) total += w;
    return total;
  }

 private:
  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::int64_t class_index_or(std::int64_t fallback, std::size_t level,
                              const std::string& name) const {
    const auto& classes = levels_[level].classes;
    const auto it = std::find(classes.begin(), classes.end(), name);
    return it == classes.end() ? fallback : static_cast<std::int64_t>(it - classes.begin());
  }

  void validate(const std::string& source) const {
    // Every class below the top level needs at least one parent edge.
    for (std::size_t l = 0; l + 1 < levels_.size(); ++l)
      for (std::size_t b = 0; b < levels_[l + 1].classes.size(); ++b) {
        bool has_parent = false;
        for (std::size_t a = 0; a < levels_[l].classes.size() && !has_parent; ++a)
          has_parent = edges_[l][a][b];
        HDL_CHECK(has_parent, source, ": class '", levels_[l + 1].classes[b], "' in level '",
                  levels_[l + 1].name, "' has no parent edge");
      }
    HDL_CHECK(count_valid_paths() >= 1, source, ": taxonomy admits no valid label path");
  }

  std::vector<LevelSpec> levels_;
  std::vector<std::vector<std::vector<bool>>> edges_;  // edges_[l][parent][child]
};

// Fraction of predicted paths violating the hierarchy; an empty prediction
// list counts as zero violations.
inline double violation_rate(const Taxonomy& tax, const std::vector<LabelPath>& predictions) {
  if (predictions.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& p : predictions)
    if (!tax.is_valid_path(p)) ++bad;
  return static_cast<double>(bad) / static_cast<double>(predictions.size());
}

// Per-level fraction of exact class matches.
inline std::vector<double> per_level_accuracy(const std::vector<LabelPath>& predictions,
                                              const std::vector<LabelPath>& truths) {
  HDL_CHECK(predictions.size() == truths.size(), "per_level_accuracy: ", predictions.size(),
            " predictions vs ", truths.size(), " truths");
  HDL_CHECK(!predictions.empty(), "per_level_accuracy: empty sample list");
  const std::size_t n_levels = truths[0].size();
  std::vector<double> acc(n_levels, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    HDL_CHECK(predictions[i].size() == n_levels && truths[i].size() == n_levels,
              "per_level_accuracy: inconsistent path length at sample ", i);
    for (std::size_t l = 0; l < n_levels; ++l)
      if (predictions[i][l] == truths[i][l]) acc[l] += 1.0;
  }
  for (double& a : acc) a /= static_cast<double>(predictions.size());
  return acc;
}

// Fraction of samples whose full path matches exactly.
inline double path_accuracy(const std::vector<LabelPath>& predictions,
                            const std::vector<LabelPath>& truths) {
  HDL_CHECK(predictions.size() == truths.size(), "path_accuracy: ", predictions.size(),
            " predictions vs ", truths.size(), " truths");
  if (predictions.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == truths[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

}  // namespace hdl
