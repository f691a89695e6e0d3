#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adapter.hpp"
#include "calibrate.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "prediction.hpp"

namespace tta {

enum class SearchObjective { Accuracy, LogLikelihood, CalibratedLL };

inline std::string_view to_string(SearchObjective o) {
  switch (o) {
    case SearchObjective::Accuracy: return "acc";
    case SearchObjective::LogLikelihood: return "ll";
    case SearchObjective::CalibratedLL: return "cll";
  }
  throw UsageError("invalid objective");
}

inline SearchObjective parse_objective(std::string_view s) {
  if (s == "acc" || s == "accuracy") return SearchObjective::Accuracy;
  if (s == "ll" || s == "log-likelihood") return SearchObjective::LogLikelihood;
  if (s == "cll" || s == "calibrated-log-likelihood") return SearchObjective::CalibratedLL;
  throw UsageError("unknown objective '" + std::string(s) + "' (expected acc, ll or cll)");
}

inline double evaluate_objective(const PredictionMatrix& m, const LabelVector& y, SearchObjective o) {
  switch (o) {
    case SearchObjective::Accuracy: return accuracy(m, y);
    case SearchObjective::LogLikelihood: return log_likelihood(m, y);
    case SearchObjective::CalibratedLL: return calibrated_ll(m, y).first;
  }
  throw UsageError("invalid objective");
}

struct SearchStep {
  std::size_t t = 0;  // 1-based
  std::size_t chosen_id = 0;
  double objective_value = 0.0;
};

struct SearchTrace {
  SearchObjective objective = SearchObjective::CalibratedLL;
  std::size_t pool_size = 0;
  std::size_t policy_size = 0;
  std::vector<SearchStep> steps;

  /// id -> number of times chosen, for ids chosen more than once.
  std::map<std::size_t, std::size_t> repeats() const {
    std::map<std::size_t, std::size_t> counts;
    for (const auto& s : steps) ++counts[s.chosen_id];
    std::erase_if(counts, [](const auto& kv) { return kv.second < 2; });
    return counts;
  }
};

inline std::string serialize_trace(const SearchTrace& tr) {
  std::ostringstream os;
  os.precision(12);
  os << "tta-trace 1\n"
     << "objective " << to_string(tr.objective) << '\n'
     << "pool_size " << tr.pool_size << '\n'
     << "policy_size " << tr.policy_size << '\n'
     << "# t chosen_id objective\n";
  for (const auto& s : tr.steps) os << s.t << ' ' << s.chosen_id << ' ' << s.objective_value << '\n';
  os << "repeats";
  for (const auto& [id, n] : tr.repeats()) os << ' ' << id << ':' << n;
  os << '\n';
  return os.str();
}

struct GreedyResult {
  std::vector<std::size_t> ids;
  SearchTrace trace;
  PredictionMatrix mean;  // running mean after the last step
};

/// Greedy policy search over precomputed candidate predictions. Step t adds the
/// candidate maximizing objective(((t-1)/t) pi + (1/t) pi_s), scanning the whole
/// pool every step (selection with replacement); ties go to the lowest id.
/// Per-step candidate scoring runs on `workers` threads.
inline GreedyResult greedy_search(std::span<const PredictionMatrix> candidates, const LabelVector& y,
                                  std::size_t policy_size, SearchObjective objective,
                                  std::size_t workers = 1) {
  if (candidates.empty()) throw UsageError("greedy search needs at least one candidate");
  if (policy_size < 1) throw UsageError("policy size T must be >= 1");
  for (const auto& c : candidates)
    if (!c.same_shape(candidates[0])) throw DataError("candidate prediction matrices differ in shape");
  check_labels(candidates[0], y);

  GreedyResult result;
  result.trace.objective = objective;
  result.trace.pool_size = candidates.size();
  result.trace.policy_size = policy_size;
  RunningMean running(candidates[0].n_objects(), candidates[0].n_classes());
  std::vector<double> scores(candidates.size());
  const std::size_t lanes = std::max<std::size_t>(1, std::min(workers, candidates.size()));

  for (std::size_t t = 1; t <= policy_size; ++t) {
    // One scratch matrix per candidate keeps workers independent.
    parallel_for(candidates.size(), lanes, [&](std::size_t b) {
      PredictionMatrix next;
      running.peek(candidates[b], next);
      scores[b] = evaluate_objective(next, y, objective);
    });
    std::size_t best = 0;
    for (std::size_t b = 1; b < candidates.size(); ++b)
      if (scores[b] > scores[best]) best = b;
    running.add(candidates[best]);
    result.ids.push_back(best);
    result.trace.steps.push_back({t, best, scores[best]});
  }
  result.mean = running.mean();
  return result;
}

/// Mean of the candidate matrices listed in `ids` (repeats count).
inline PredictionMatrix policy_predictions(std::span<const PredictionMatrix> candidates,
                                           std::span<const std::size_t> ids) {
  if (ids.empty()) throw UsageError("policy is empty");
  std::vector<PredictionMatrix> chosen;
  chosen.reserve(ids.size());
  for (auto id : ids) {
    if (id >= candidates.size()) throw DataError("candidate id " + std::to_string(id) + " out of range");
    chosen.push_back(candidates[id]);
  }
  return average_predictions(chosen);
}

/// Accuracy, LL and cLL on the data the temperature was fitted to.
inline MetricReport in_sample_report(const PredictionMatrix& m, const LabelVector& y) {
  MetricReport r;
  r.accuracy = accuracy(m, y);
  r.log_likelihood = log_likelihood(m, y);
  const auto [cll, tau] = calibrated_ll(m, y);
  r.calibrated_ll = cll;
  r.tau = tau;
  return r;
}

struct AblationRow {
  SearchObjective objective;
  std::vector<std::size_t> ids;
  MetricReport report;  // validation metrics of the final policy
};

/// Runs the greedy search once per objective on identical inputs.
inline std::vector<AblationRow> objective_ablation(std::span<const PredictionMatrix> candidates,
                                                   const LabelVector& y, std::size_t policy_size,
                                                   std::size_t workers = 1) {
  std::vector<AblationRow> rows;
  for (auto o : {SearchObjective::Accuracy, SearchObjective::LogLikelihood, SearchObjective::CalibratedLL}) {
    auto res = greedy_search(candidates, y, policy_size, o, workers);
    rows.push_back({o, res.ids, in_sample_report(res.mean, y)});
  }
  return rows;
}

struct GridPoint {
  double magnitude = 0.0;
  MetricReport report;
};

struct GridSearchResult {
  double best_magnitude = 0.0;
  std::vector<GridPoint> points;
};

/// For each M: draw a pool from recipe_family(M) (stream derive_seed(seed, {index
/// of M})), average the predictions of its first samples_per_M sub-policies and
/// score the average with calibrated LL. The best M wins, the smaller on ties.
inline GridSearchResult grid_search_magnitude(const std::function<PoolRecipe(double)>& recipe_family,
                                              ModelAdapter& adapter, std::span<const ImageBuffer> images,
                                              const LabelVector& y, std::span<const double> grid,
                                              std::size_t samples_per_m, std::uint64_t seed,
                                              const ApplyConfig& cfg = {}, std::size_t workers = 1) {
  if (grid.empty()) throw UsageError("magnitude grid is empty");
  if (samples_per_m < 1) throw UsageError("samples_per_M must be >= 1");
  GridSearchResult result;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    Rng rng(derive_seed(seed, {g}));
    const auto pool = generate_pool(recipe_family(grid[g]), rng);
    if (pool.size() < samples_per_m)
      throw UsageError("recipe for M=" + std::to_string(grid[g]) + " yields only " +
                       std::to_string(pool.size()) + " sub-policies");
    std::vector<PredictionMatrix> preds(samples_per_m);
    const std::uint64_t pred_seed = derive_seed(seed, {g, 1});
    parallel_for(samples_per_m, workers, [&](std::size_t i) {
      preds[i] = predict_under_subpolicy(adapter, images, pool[i], pred_seed, 1, cfg);
    });
    result.points.push_back({grid[g], in_sample_report(average_predictions(preds), y)});
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < result.points.size(); ++g) {
    const auto& cur = result.points[g];
    const auto& top = result.points[best];
    if (cur.report.calibrated_ll > top.report.calibrated_ll ||
        (cur.report.calibrated_ll == top.report.calibrated_ll && cur.magnitude < top.magnitude))
      best = g;
  }
  result.best_magnitude = result.points[best].magnitude;
  return result;
}

}  // namespace tta
