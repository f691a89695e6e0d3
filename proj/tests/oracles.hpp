#pragma once

// Independent reference computations used by the tests. Nothing here calls the
// code paths it is used to check (running means, golden-section search, greedy
// bookkeeping).

#include <cmath>
#include <span>
#include <vector>

#include "tta/calibrate.hpp"
#include "tta/gps.hpp"
#include "tta/image.hpp"
#include "tta/metrics.hpp"
#include "tta/prediction.hpp"
#include "tta/rng.hpp"

namespace oracle {

using tta::LabelVector;
using tta::PredictionMatrix;

/// Rows of normalized positive draws; cubing uniform draws makes rows peaky.
inline std::vector<PredictionMatrix> random_candidates(std::size_t count, std::size_t n, std::size_t k,
                                                       tta::Rng& rng) {
  std::vector<PredictionMatrix> out;
  for (std::size_t b = 0; b < count; ++b) {
    PredictionMatrix m(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double u = rng.uniform() + 1e-3;
        m(i, c) = u * u * u;
        sum += m(i, c);
      }
      for (std::size_t c = 0; c < k; ++c) m(i, c) /= sum;
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline LabelVector random_labels(std::size_t n, std::size_t k, tta::Rng& rng) {
  LabelVector y(n);
  for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(k));
  return y;
}

/// Sum then divide, from scratch.
inline PredictionMatrix batch_mean(std::span<const PredictionMatrix> ms) {
  PredictionMatrix out(ms[0].n_objects(), ms[0].n_classes());
  for (const auto& m : ms)
    for (std::size_t j = 0; j < m.data().size(); ++j) out.data()[j] += m.data()[j];
  for (double& v : out.data()) v /= static_cast<double>(ms.size());
  return out;
}

/// Per-step brute force: for every candidate rebuild the whole policy mean
/// from the chosen list and score it; pick the first maximum.
inline std::vector<std::size_t> brute_force_greedy(std::span<const PredictionMatrix> candidates,
                                                   const LabelVector& y, std::size_t steps,
                                                   tta::SearchObjective objective) {
  std::vector<std::size_t> chosen;
  for (std::size_t t = 0; t < steps; ++t) {
    double best_val = -INFINITY;
    std::size_t best = 0;
    for (std::size_t b = 0; b < candidates.size(); ++b) {
      std::vector<PredictionMatrix> members;
      for (auto id : chosen) members.push_back(candidates[id]);
      members.push_back(candidates[b]);
      const double v = tta::evaluate_objective(batch_mean(members), y, objective);
      if (b == 0 || v > best_val) {
        best_val = v;
        best = b;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

struct GridBest {
  double tau = 1.0;
  double ll = -INFINITY;
};

/// Dense linear grid over [0.05, 20] scored through the public rescale + LL path.
inline GridBest dense_grid_best(const PredictionMatrix& m, const LabelVector& y, std::size_t points = 2001) {
  GridBest best;
  for (std::size_t i = 0; i < points; ++i) {
    const double tau = tta::kTauMin + (tta::kTauMax - tta::kTauMin) * static_cast<double>(i) /
                                          static_cast<double>(points - 1);
    const double ll = tta::log_likelihood(tta::rescale_with_temperature(m, {tau}), y);
    if (ll > best.ll) best = {tau, ll};
  }
  return best;
}

/// Two-class rows (p, 1-p) for p = 1/20 .. 19/20, each repeated 20*copies times
/// with exactly round(20*copies*p) labels of class 0. Labels match the
/// probabilities exactly, so tau = 1 maximizes LL.
inline std::pair<PredictionMatrix, LabelVector> calibrated_two_class(std::size_t copies) {
  std::vector<double> data;
  LabelVector y;
  for (int step = 1; step < 20; ++step) {
    const double p = step / 20.0;
    const std::size_t reps = 20 * copies;
    const auto zeros = static_cast<std::size_t>(step) * copies;
    for (std::size_t r = 0; r < reps; ++r) {
      data.push_back(p);
      data.push_back(1.0 - p);
      y.push_back(r < zeros ? 0u : 1u);
    }
  }
  const std::size_t n = y.size();
  return {PredictionMatrix(n, 2, std::move(data)), std::move(y)};
}

/// Ridge least squares on standardized pixels with +-1 targets (two classes),
/// solved through the normal equations by Gaussian elimination.
inline double least_squares_training_accuracy(std::span<const tta::ImageBuffer> images, const LabelVector& y) {
  const std::size_t n = images.size();
  const std::size_t d = images[0].size() + 1;
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j + 1 < d; ++j) x[i * d + j] = images[i].data()[j] / 255.0;
    x[i * d + d - 1] = 1.0;
  }
  std::vector<double> a(d * (d + 1), 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x[i * d + r] * x[i * d + c];
      a[r * (d + 1) + c] = s + (r == c ? 1e-6 : 0.0);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i * d + r] * (y[i] == 1 ? 1.0 : -1.0);
    a[r * (d + 1) + d] = s;
  }
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r * (d + 1) + col]) > std::abs(a[piv * (d + 1) + col])) piv = r;
    for (std::size_t c = 0; c <= d; ++c) std::swap(a[col * (d + 1) + c], a[piv * (d + 1) + c]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r * (d + 1) + col] / a[col * (d + 1) + col];
      for (std::size_t c = col; c <= d; ++c) a[r * (d + 1) + c] -= f * a[col * (d + 1) + c];
    }
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * a[j * (d + 1) + d] / a[j * (d + 1) + j];
    hits += ((s > 0.0) == (y[i] == 1)) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace oracle
