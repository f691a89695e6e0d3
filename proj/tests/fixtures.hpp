#pragma once

// Constructed prediction sets shared by the CLI tests and the acceptance run.

#include <vector>

#include "tta/prediction.hpp"
#include "tta/rng.hpp"

namespace fixture {

using tta::LabelVector;
using tta::PredictionMatrix;

struct CandidateSet {
  std::vector<PredictionMatrix> candidates;
  LabelVector labels;
};

/// Three classes, four candidates:
///   0: accurate (90%) but decalibrated -- timid when right, near-certain when
///      wrong, which no single temperature can repair;
///   1: less accurate (85%) and calibrated -- its confidence is its hit rate;
///   2, 3: weak, nearly uniform guessers.
inline CandidateSet decalibrated_candidates(std::size_t n, std::uint64_t seed) {
  constexpr std::size_t k = 3;
  tta::Rng rng(seed);
  CandidateSet out;
  out.candidates.assign(4, PredictionMatrix(n, k));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::uint32_t>(rng.below(k));
    out.labels[i] = y;
    auto other = [&] { return static_cast<std::uint32_t>((y + 1 + rng.below(k - 1)) % k); };

    auto& a = out.candidates[0];
    if (rng.uniform() < 0.9) {
      for (std::size_t c = 0; c < k; ++c) a(i, c) = c == y ? 0.6 : 0.2;
    } else {
      const auto w = other();
      for (std::size_t c = 0; c < k; ++c) a(i, c) = c == w ? 1.0 - 2e-6 : 1e-6;
    }

    auto& b = out.candidates[1];
    const auto top = rng.uniform() < 0.85 ? y : other();
    for (std::size_t c = 0; c < k; ++c) b(i, c) = c == top ? 0.85 : 0.075;

    for (std::size_t g = 2; g < 4; ++g) {
      const auto guess = static_cast<std::uint32_t>(rng.below(k));
      for (std::size_t c = 0; c < k; ++c) out.candidates[g](i, c) = c == guess ? 0.4 : 0.3;
    }
  }
  return out;
}

}  // namespace fixture
