#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "prediction.hpp"

namespace tta {

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
inline double accuracy(const PredictionMatrix& m, const LabelVector& y) {
  check_labels(m, y);
  if (y.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += m.argmax(i) == y[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

inline constexpr std::size_t kSeverities = 5;

/// Error rates E[c][s] for each corruption c and severity s = 1..5.
class CorruptionErrorTable {
 public:
  void set(const std::string& corruption, std::size_t severity, double error) {
    if (severity < 1 || severity > kSeverities)
      throw DataError("severity " + std::to_string(severity) + " outside 1..5");
    if (!(error >= 0.0 && error <= 1.0))
      throw DataError("error rate for " + corruption + " is outside [0, 1]");
    auto it = rows_.find(corruption);
    if (it == rows_.end()) {
      order_.push_back(corruption);
      it = rows_.emplace(corruption, Row{}).first;
    }
    it->second.values[severity - 1] = error;
    it->second.present[severity - 1] = true;
  }

  double get(const std::string& corruption, std::size_t severity) const {
    return row(corruption)[severity - 1];
  }

  /// Severities 1..5 of one corruption; throws if any is missing.
  const std::array<double, kSeverities>& row(const std::string& corruption) const {
    const auto it = rows_.find(corruption);
    if (it == rows_.end()) throw DataError("unknown corruption '" + corruption + "'");
    for (std::size_t s = 0; s < kSeverities; ++s)
      if (!it->second.present[s])
        throw DataError("corruption '" + corruption + "' is missing severity " + std::to_string(s + 1));
    return it->second.values;
  }

  const std::vector<std::string>& corruptions() const noexcept { return order_; }
  bool contains(const std::string& c) const { return rows_.count(c) != 0; }

 private:
  struct Row {
    std::array<double, kSeverities> values{};
    std::array<bool, kSeverities> present{};
  };
  std::map<std::string, Row> rows_;
  std::vector<std::string> order_;
};

/// Baseline tables have the same shape; they only act as normalizers.
using BaselineErrorTable = CorruptionErrorTable;

/// uCE_c: mean error over the five severities.
inline double unnormalized_corruption_error(const CorruptionErrorTable& t, const std::string& c) {
  double sum = 0.0;
  for (double e : t.row(c)) sum += e;
  return sum / static_cast<double>(kSeverities);
}

/// CE_c: severity-summed error divided by the baseline's severity-summed error.
inline double normalized_corruption_error(const CorruptionErrorTable& t, const BaselineErrorTable& baseline,
                                          const std::string& c) {
  double num = 0.0;
  double den = 0.0;
  for (double e : t.row(c)) num += e;
  if (!baseline.contains(c)) throw DataError("baseline table has no corruption '" + c + "'");
  for (double e : baseline.row(c)) den += e;
  if (!(den > 0.0)) throw DataError("baseline errors for '" + c + "' sum to zero; CE is undefined");
  return num / den;
}

/// muCE without a baseline, mCE with one.
inline double mean_corruption_error(const CorruptionErrorTable& t,
                                    const BaselineErrorTable* baseline = nullptr) {
  if (t.corruptions().empty()) throw DataError("corruption table is empty");
  double sum = 0.0;
  for (const auto& c : t.corruptions())
    sum += baseline ? normalized_corruption_error(t, *baseline, c) : unnormalized_corruption_error(t, c);
  return sum / static_cast<double>(t.corruptions().size());
}

// Text format: a header row "corruption 1 2 3 4 5", then one row per
// corruption with its five error rates. '#' starts a comment line.

inline std::string serialize_corruption_table(const CorruptionErrorTable& t) {
  std::ostringstream os;
  os.precision(17);
  os << "corruption";
  for (std::size_t s = 1; s <= kSeverities; ++s) os << ' ' << s;
  os << '\n';
  for (const auto& c : t.corruptions()) {
    os << c;
    for (double e : t.row(c)) os << ' ' << e;
    os << '\n';
  }
  return os.str();
}

inline CorruptionErrorTable parse_corruption_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  CorruptionErrorTable t;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (!header) {
      std::size_t s = 0;
      bool ok = name == "corruption";
      for (std::size_t expect = 1; ok && expect <= kSeverities; ++expect) ok = (ls >> s) && s == expect;
      if (!ok) throw DataError("corruption table line " + std::to_string(line_no) +
                               ": expected header 'corruption 1 2 3 4 5'");
      header = true;
      continue;
    }
    for (std::size_t s = 1; s <= kSeverities; ++s) {
      double e;
      if (!(ls >> e))
        throw DataError("corruption table line " + std::to_string(line_no) + ": missing severity " +
                        std::to_string(s));
      t.set(name, s, e);
    }
  }
  if (!header) throw DataError("corruption table has no header");
  return t;
}

inline CorruptionErrorTable load_corruption_table(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_corruption_table(ss.str());
}

}  // namespace tta
