#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "metrics.hpp"
#include "prediction.hpp"
#include "rng.hpp"

namespace tta {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kTauMin = 0.05;
inline constexpr double kTauMax = 20.0;

/// Softmax temperature, tau > 0.
struct Temperature {
  double tau = 1.0;
  friend bool operator==(const Temperature&, const Temperature&) = default;
};

namespace detail {

/// softmax(logs / tau) into `out`, shifted by the row max for stability.
inline void softmax_row(std::span<const double> logs, double tau, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logs) mx = std::max(mx, l / tau);
  double z = 0.0;
  for (std::size_t k = 0; k < logs.size(); ++k) {
    out[k] = std::exp(logs[k] / tau - mx);
    z += out[k];
  }
  for (double& v : out) v /= z;
}

}  // namespace detail

/// Per row: softmax(log(p + 1e-12) / tau).
inline PredictionMatrix rescale_with_temperature(const PredictionMatrix& m, Temperature t) {
  if (!(t.tau > 0.0)) throw UsageError("temperature must be positive");
  PredictionMatrix out(m.n_objects(), m.n_classes());
  std::vector<double> logs(m.n_classes());
  for (std::size_t i = 0; i < m.n_objects(); ++i) {
    const auto r = m.row(i);
    for (std::size_t k = 0; k < logs.size(); ++k) logs[k] = std::log(r[k] + kProbFloor);
    detail::softmax_row(logs, t.tau, out.row(i));
  }
  return out;
}

/// Mean over objects of ln(p[i, y_i] + 1e-12).
inline double log_likelihood(const PredictionMatrix& m, const LabelVector& y) {
  check_labels(m, y);
  if (y.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += std::log(m(i, y[i]) + kProbFloor);
  return sum / static_cast<double>(y.size());
}

/// LL(tau) = log_likelihood(rescale_with_temperature(m, tau), y), evaluated
/// without materialising the rescaled matrix. Same arithmetic, same bits.
class TemperatureObjective {
 public:
  TemperatureObjective(const PredictionMatrix& m, const LabelVector& y)
      : n_(m.n_objects()), k_(m.n_classes()), labels_(&y), logs_(m.data().size()), row_(k_) {
    check_labels(m, y);
    for (std::size_t j = 0; j < logs_.size(); ++j) logs_[j] = std::log(m.data()[j] + kProbFloor);
  }

  double operator()(double tau) const {
    if (n_ == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      detail::softmax_row({logs_.data() + i * k_, k_}, tau, row_);
      sum += std::log(row_[(*labels_)[i]] + kProbFloor);
    }
    return sum / static_cast<double>(n_);
  }

 private:
  std::size_t n_;
  std::size_t k_;
  const LabelVector* labels_;
  std::vector<double> logs_;
  mutable std::vector<double> row_;
};

struct TemperatureFit {
  Temperature tau;
  double log_likelihood = 0.0;  // at the fitted tau
};

/// Golden-section search on ln(tau) over [ln 0.05, ln 20] down to an interval
/// of 1e-4. tau = 1 and both box ends are also scored; the best wins, with
/// tau = 1 preferred on ties and returned outright when the objective is flat.
template <class Objective>
inline TemperatureFit maximize_over_temperature(const Objective& ll) {
  constexpr double kInvPhi = 0.6180339887498949;
  double a = std::log(kTauMin);
  double b = std::log(kTauMax);
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = ll(std::exp(c));
  double fd = ll(std::exp(d));
  while (b - a > 1e-4) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = ll(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = ll(std::exp(d));
    }
  }
  const double golden_tau = std::exp(fc >= fd ? c : d);
  const double golden_val = std::max(fc, fd);

  const double candidates_tau[] = {1.0, golden_tau, kTauMin, kTauMax};
  const double candidates_val[] = {ll(1.0), golden_val, ll(kTauMin), ll(kTauMax)};
  double lo = candidates_val[0];
  double hi = candidates_val[0];
  std::size_t best = 0;
  for (std::size_t i = 1; i < 4; ++i) {
    lo = std::min(lo, candidates_val[i]);
    hi = std::max(hi, candidates_val[i]);
    if (candidates_val[i] > candidates_val[best]) best = i;
  }
  if (hi - lo < 1e-12) return {{1.0}, candidates_val[0]};
  return {{candidates_tau[best]}, candidates_val[best]};
}

inline TemperatureFit fit_temperature_with_value(const PredictionMatrix& m, const LabelVector& y) {
  return maximize_over_temperature(TemperatureObjective(m, y));
}

inline Temperature fit_temperature(const PredictionMatrix& m, const LabelVector& y) {
  return fit_temperature_with_value(m, y).tau;
}

/// Log-likelihood after fitting the temperature on the same data.
inline std::pair<double, Temperature> calibrated_ll(const PredictionMatrix& m, const LabelVector& y) {
  const auto fit = fit_temperature_with_value(m, y);
  return {fit.log_likelihood, fit.tau};
}

/// The other temperature placement: every member is rescaled, then averaged.
/// Everything else in the library calibrates the average itself.
inline PredictionMatrix rescale_members_then_average(std::span<const PredictionMatrix> members, Temperature t) {
  std::vector<PredictionMatrix> scaled;
  scaled.reserve(members.size());
  for (const auto& m : members) scaled.push_back(rescale_with_temperature(m, t));
  return average_predictions(scaled);
}

/// Best LL over one temperature shared by all members, scale-then-average.
inline std::pair<double, Temperature> calibrated_ll_scaled_members(std::span<const PredictionMatrix> members,
                                                                   const LabelVector& y) {
  if (members.empty()) throw DataError("no member predictions to calibrate");
  check_labels(members[0], y);
  const auto fit = maximize_over_temperature(
      [&](double tau) { return log_likelihood(rescale_members_then_average(members, {tau}), y); });
  return {fit.log_likelihood, fit.tau};
}

struct MetricReport {
  double accuracy = 0.0;
  double log_likelihood = 0.0;
  double calibrated_ll = 0.0;
  Temperature tau;
  std::size_t n_splits = 0;
  std::uint64_t seed = 0;
  bool stratified = true;  // false when some class had a single object
};

inline std::string serialize_report(const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "tta-report 1\n"
     << "accuracy " << r.accuracy << '\n'
     << "log_likelihood " << r.log_likelihood << '\n'
     << "calibrated_ll " << r.calibrated_ll << '\n'
     << "tau " << r.tau.tau << '\n'
     << "n_splits " << r.n_splits << '\n'
     << "seed " << r.seed << '\n'
     << "stratified " << (r.stratified ? 1 : 0) << '\n';
  return os.str();
}

struct HalfSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> eval;
  bool stratified = true;
};

/// Random half/half split, stratified by label when every present class has at
/// least two objects. Odd class remainders alternate between the halves.
inline HalfSplit stratified_halves(const LabelVector& y, std::size_t n_classes, Rng& rng) {
  if (y.size() < 2) throw DataError("test-time cross-validation needs at least two objects");
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  HalfSplit split;
  for (const auto& g : by_class)
    if (g.size() == 1) split.stratified = false;
  if (split.stratified) {
    bool odd_to_fit = true;
    for (auto& g : by_class) {
      rng.shuffle(g.begin(), g.end());
      std::size_t half = g.size() / 2;
      if (g.size() % 2 == 1) {
        if (odd_to_fit) ++half;
        odd_to_fit = !odd_to_fit;
      }
      split.fit.insert(split.fit.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(half));
      split.eval.insert(split.eval.end(), g.begin() + static_cast<std::ptrdiff_t>(half), g.end());
    }
  } else {
    std::vector<std::size_t> all(y.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all.begin(), all.end());
    const std::size_t half = (all.size() + 1) / 2;
    split.fit.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(half));
    split.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(half), all.end());
  }
  std::sort(split.fit.begin(), split.fit.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

inline std::pair<PredictionMatrix, LabelVector> select_rows(const PredictionMatrix& m, const LabelVector& y,
                                                            const std::vector<std::size_t>& idx) {
  PredictionMatrix out(idx.size(), m.n_classes());
  LabelVector labels(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
    labels[r] = y[idx[r]];
  }
  return {std::move(out), std::move(labels)};
}

/// Fits tau on one random half and scores the other, averaged over n_splits
/// splits. Split j draws from its own stream derive_seed(seed, {j}).
inline MetricReport test_time_cross_validation(const PredictionMatrix& m, const LabelVector& y,
                                               std::size_t n_splits = 5, std::uint64_t seed = 0) {
  check_labels(m, y);
  if (n_splits < 1) throw UsageError("need at least one split");
  MetricReport report;
  report.n_splits = n_splits;
  report.seed = seed;
  double tau_sum = 0.0;
  for (std::size_t j = 0; j < n_splits; ++j) {
    Rng rng(derive_seed(seed, {j}));
    const auto split = stratified_halves(y, m.n_classes(), rng);
    report.stratified = report.stratified && split.stratified;
    const auto [fit_m, fit_y] = select_rows(m, y, split.fit);
    const auto [eval_m, eval_y] = select_rows(m, y, split.eval);
    const Temperature tau = fit_temperature(fit_m, fit_y);
    report.accuracy += accuracy(eval_m, eval_y);
    report.log_likelihood += log_likelihood(eval_m, eval_y);
    report.calibrated_ll += TemperatureObjective(eval_m, eval_y)(tau.tau);
    tau_sum += tau.tau;
  }
  const double inv = 1.0 / static_cast<double>(n_splits);
  report.accuracy *= inv;
  report.log_likelihood *= inv;
  report.calibrated_ll *= inv;
  report.tau = {tau_sum * inv};
  return report;
}

}  // namespace tta
