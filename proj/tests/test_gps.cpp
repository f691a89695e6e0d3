#include <gtest/gtest.h>

#include <map>

#include "oracles.hpp"
#include "tta/gps.hpp"

using namespace tta;

namespace {

constexpr SearchObjective kObjectives[] = {SearchObjective::Accuracy, SearchObjective::LogLikelihood,
                                           SearchObjective::CalibratedLL};

// Knows the exact bytes of every clean image: confident and right on those,
// uniform on anything else.
class MemorizingAdapter : public ModelAdapter {
 public:
  MemorizingAdapter(std::span<const ImageBuffer> images, const LabelVector& y, std::size_t k) : k_(k) {
    for (std::size_t i = 0; i < images.size(); ++i) known_.emplace(key(images[i]), y[i]);
  }
  PredictionMatrix predict(std::span<const ImageBuffer> images) override {
    PredictionMatrix m(images.size(), k_, 1.0 / static_cast<double>(k_));
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto it = known_.find(key(images[i]));
      if (it == known_.end()) continue;
      for (std::size_t c = 0; c < k_; ++c) m(i, c) = c == it->second ? 0.8 : 0.2 / static_cast<double>(k_ - 1);
    }
    return m;
  }

 private:
  static std::string key(const ImageBuffer& img) {
    return {reinterpret_cast<const char*>(img.data().data()), img.data().size()};
  }
  std::size_t k_;
  std::map<std::string, std::uint32_t> known_;
};

// Random pixels with 0 and 255 present in every channel, so Autocontrast has
// nothing to stretch.
std::vector<ImageBuffer> full_range_images(std::size_t n, Rng& rng) {
  std::vector<ImageBuffer> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImageBuffer img(12, 12, 3);
    for (auto& p : img.data()) p = static_cast<std::uint8_t>(rng.below(256));
    for (std::size_t c = 0; c < 3; ++c) {
      img.at(0, 0, c) = 0;
      img.at(11, 11, c) = 255;
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

TEST(Greedy, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const std::size_t n = 5 + rng.below(26), k = 2 + rng.below(4), b = 1 + rng.below(10), t = 1 + rng.below(5);
    const auto cands = oracle::random_candidates(b, n, k, rng);
    const auto y = oracle::random_labels(n, k, rng);
    for (auto o : kObjectives) {
      const auto res = greedy_search(cands, y, t, o);
      EXPECT_EQ(res.ids, oracle::brute_force_greedy(cands, y, t, o))
          << "seed " << seed << " objective " << to_string(o);
    }
  }
}

TEST(Greedy, RunningMeanMatchesBatchMean) {
  Rng rng(3);
  const auto cands = oracle::random_candidates(8, 20, 3, rng);
  const auto y = oracle::random_labels(20, 3, rng);
  for (std::size_t t = 1; t <= 6; ++t) {
    const auto res = greedy_search(cands, y, t, SearchObjective::LogLikelihood);
    std::vector<PredictionMatrix> chosen;
    for (auto id : res.ids) chosen.push_back(cands[id]);
    const auto expected = oracle::batch_mean(chosen);
    for (std::size_t j = 0; j < expected.data().size(); ++j)
      ASSERT_NEAR(res.mean.data()[j], expected.data()[j], 1e-12);
  }
}

TEST(Greedy, SingleStepPicksBestCandidate) {
  Rng rng(4);
  const auto cands = oracle::random_candidates(6, 30, 3, rng);
  const auto y = oracle::random_labels(30, 3, rng);
  for (auto o : kObjectives) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < cands.size(); ++b)
      if (evaluate_objective(cands[b], y, o) > evaluate_objective(cands[best], y, o)) best = b;
    EXPECT_EQ(greedy_search(cands, y, 1, o).ids, std::vector<std::size_t>{best});
  }
}

TEST(Greedy, IdenticalCandidatesTieToLowestId) {
  Rng rng(5);
  const auto one = oracle::random_candidates(1, 10, 3, rng)[0];
  const std::vector<PredictionMatrix> cands(4, one);
  const auto res = greedy_search(cands, oracle::random_labels(10, 3, rng), 5, SearchObjective::CalibratedLL);
  EXPECT_EQ(res.ids, std::vector<std::size_t>(5, 0));
  EXPECT_EQ(res.trace.repeats().at(0), 5u);
}

TEST(Greedy, DominantCandidateIsRepeated) {
  Rng rng(6);
  auto cands = oracle::random_candidates(5, 20, 3, rng);
  const auto y = oracle::random_labels(20, 3, rng);
  PredictionMatrix perfect(20, 3, 0.0);
  for (std::size_t i = 0; i < 20; ++i) perfect(i, y[i]) = 1.0;
  cands.push_back(perfect);
  const auto res = greedy_search(cands, y, 4, SearchObjective::LogLikelihood);
  EXPECT_EQ(res.ids, std::vector<std::size_t>(4, 5));
}

TEST(Greedy, AccuracySearchIgnoresTemperature) {
  Rng rng(7);
  const auto cands = oracle::random_candidates(6, 25, 4, rng);
  const auto y = oracle::random_labels(25, 4, rng);
  std::vector<PredictionMatrix> cooled;
  for (const auto& c : cands) cooled.push_back(rescale_with_temperature(c, {1.0}));
  // Uniform rescaling of every candidate by the same tau = 1 keeps the search identical.
  EXPECT_EQ(greedy_search(cands, y, 4, SearchObjective::Accuracy).ids,
            greedy_search(cooled, y, 4, SearchObjective::Accuracy).ids);
  EXPECT_EQ(accuracy(cands[0], y), accuracy(rescale_with_temperature(cands[0], {5.0}), y));
}

TEST(Greedy, WorkerCountDoesNotChangeResult) {
  Rng rng(8);
  const auto cands = oracle::random_candidates(30, 40, 5, rng);
  const auto y = oracle::random_labels(40, 5, rng);
  const auto a = greedy_search(cands, y, 6, SearchObjective::CalibratedLL, 1);
  const auto b = greedy_search(cands, y, 6, SearchObjective::CalibratedLL, 4);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(serialize_trace(a.trace), serialize_trace(b.trace));
  EXPECT_EQ(a.mean, b.mean);
}

TEST(Greedy, Errors) {
  Rng rng(9);
  const auto cands = oracle::random_candidates(2, 5, 3, rng);
  const LabelVector y{0, 1, 2, 0, 1};
  EXPECT_THROW(greedy_search({}, y, 1, SearchObjective::Accuracy), UsageError);
  EXPECT_THROW(greedy_search(cands, y, 0, SearchObjective::Accuracy), UsageError);
  EXPECT_THROW(greedy_search(cands, {0, 1}, 1, SearchObjective::Accuracy), DataError);
  std::vector<PredictionMatrix> mixed{cands[0], PredictionMatrix(5, 2, 0.5)};
  EXPECT_THROW(greedy_search(mixed, y, 1, SearchObjective::Accuracy), DataError);
  EXPECT_THROW(parse_objective("auc"), UsageError);
  EXPECT_THROW(policy_predictions(cands, std::vector<std::size_t>{2}), DataError);
}

TEST(Trace, SerializationListsStepsAndRepeats) {
  SearchTrace tr;
  tr.objective = SearchObjective::Accuracy;
  tr.pool_size = 3;
  tr.policy_size = 3;
  tr.steps = {{1, 2, 0.5}, {2, 0, 0.75}, {3, 2, 0.75}};
  EXPECT_EQ(serialize_trace(tr),
            "tta-trace 1\nobjective acc\npool_size 3\npolicy_size 3\n# t chosen_id objective\n"
            "1 2 0.5\n2 0 0.75\n3 2 0.75\nrepeats 2:2\n");
}

TEST(Ablation, OneRowPerObjective) {
  Rng rng(10);
  const auto cands = oracle::random_candidates(6, 30, 3, rng);
  const auto y = oracle::random_labels(30, 3, rng);
  const auto rows = objective_ablation(cands, y, 3);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.ids, greedy_search(cands, y, 3, row.objective).ids);
    EXPECT_GE(row.report.calibrated_ll, row.report.log_likelihood - 1e-12);
  }
  // Each objective's own search is greedy-optimal for that objective at step 1.
  EXPECT_GE(rows[2].report.calibrated_ll, calibrated_ll(cands[rows[0].ids[0]], y).first - 1.0);
}

TEST(GridSearch, SingleMagnitude) {
  Rng rng(11);
  const auto images = full_range_images(6, rng);
  const LabelVector y{0, 1, 0, 1, 0, 1};
  MemorizingAdapter model(images, y, 2);
  const double grid[] = {7.0};
  const auto res = grid_search_magnitude(
      [](double m) { return PoolRecipe{{{4, 2, m}}, false, PolicyStyle::Bare}; }, model, images, y, grid, 4, 0);
  EXPECT_EQ(res.best_magnitude, 7.0);
  ASSERT_EQ(res.points.size(), 1u);
}

TEST(GridSearch, TransformSensitiveModelPrefersZeroMagnitude) {
  Rng rng(12);
  const auto images = full_range_images(20, rng);
  LabelVector y(20);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint32_t>(i % 2);
  MemorizingAdapter model(images, y, 2);
  const double grid[] = {30.0, 0.0, 15.0};
  const auto res = grid_search_magnitude(
      [](double m) { return PoolRecipe{{{6, 2, m}}, false, PolicyStyle::Bare}; }, model, images, y, grid, 6, 3);
  EXPECT_EQ(res.best_magnitude, 0.0);
  EXPECT_EQ(res.points[1].report.accuracy, 1.0);
  for (const auto& p : res.points)
    if (p.magnitude > 0.0) {
      EXPECT_LT(p.report.calibrated_ll, res.points[1].report.calibrated_ll);
    }
}

TEST(GridSearch, Errors) {
  Rng rng(13);
  const auto images = full_range_images(2, rng);
  MemorizingAdapter model(images, {0, 1}, 2);
  const auto family = [](double m) { return PoolRecipe{{{2, 1, m}}, false, PolicyStyle::Bare}; };
  const double grid[] = {5.0};
  EXPECT_THROW(grid_search_magnitude(family, model, images, {0, 1}, {}, 1, 0), UsageError);
  EXPECT_THROW(grid_search_magnitude(family, model, images, {0, 1}, grid, 0, 0), UsageError);
  EXPECT_THROW(grid_search_magnitude(family, model, images, {0, 1}, grid, 3, 0), UsageError);
}
