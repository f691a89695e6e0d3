#include <gtest/gtest.h>

#include <algorithm>

#include "tta/metrics.hpp"

using namespace tta;

namespace {

CorruptionErrorTable table_of(const std::vector<std::pair<std::string, std::array<double, 5>>>& rows) {
  CorruptionErrorTable t;
  for (const auto& [name, errs] : rows)
    for (std::size_t s = 0; s < 5; ++s) t.set(name, s + 1, errs[s]);
  return t;
}

}  // namespace

TEST(Accuracy, Examples) {
  PredictionMatrix onehot(3, 3, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(accuracy(onehot, {0, 1, 2}), 1.0);
  PredictionMatrix uniform(4, 2, 0.5);
  EXPECT_EQ(accuracy(uniform, {0, 0, 0, 0}), 1.0);  // lowest index wins ties
  EXPECT_EQ(accuracy(onehot, {0, 0, 2}), 2.0 / 3.0);
  PredictionMatrix alt(4, 2, std::vector<double>{0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1});
  EXPECT_EQ(accuracy(alt, {0, 1, 0, 1}), 0.5);
  EXPECT_THROW(accuracy(alt, {0, 1}), DataError);
}

TEST(CorruptionError, Unnormalized) {
  const auto t = table_of({{"fog", {0.1, 0.1, 0.1, 0.1, 0.1}},
                           {"snow", {0.1, 0.2, 0.3, 0.4, 0.5}},
                           {"blur", {0, 0, 0, 0, 0}}});
  EXPECT_NEAR(unnormalized_corruption_error(t, "fog"), 0.1, 1e-15);
  EXPECT_NEAR(unnormalized_corruption_error(t, "snow"), 0.3, 1e-15);
  EXPECT_EQ(unnormalized_corruption_error(t, "blur"), 0.0);
  EXPECT_THROW(unnormalized_corruption_error(t, "rain"), DataError);
}

TEST(CorruptionError, Normalized) {
  const auto base = table_of({{"fog", {0.2, 0.4, 0.6, 0.8, 1.0}}, {"snow", {0.5, 0.5, 0.5, 0.5, 0.5}}});
  const auto half = table_of({{"fog", {0.1, 0.2, 0.3, 0.4, 0.5}}, {"snow", {0.25, 0.25, 0.25, 0.25, 0.25}}});
  EXPECT_EQ(normalized_corruption_error(base, base, "fog"), 1.0);
  EXPECT_NEAR(normalized_corruption_error(half, base, "fog"), 0.5, 1e-15);
  EXPECT_EQ(mean_corruption_error(base, &base), 1.0);
  EXPECT_NEAR(mean_corruption_error(half, &base), 0.5, 1e-15);
  const auto zero = table_of({{"fog", {0, 0, 0, 0, 0}}});
  EXPECT_THROW(normalized_corruption_error(half, zero, "fog"), DataError);
}

TEST(CorruptionError, MeanOverCorruptions) {
  const auto t = table_of({{"a", {0.2, 0.2, 0.2, 0.2, 0.2}}, {"b", {0.4, 0.4, 0.4, 0.4, 0.4}}});
  EXPECT_NEAR(mean_corruption_error(t), 0.3, 1e-15);
  EXPECT_THROW(mean_corruption_error(CorruptionErrorTable{}), DataError);
}

TEST(CorruptionError, OrderInvariance) {
  const auto t1 = table_of({{"a", {0.1, 0.3, 0.2, 0.05, 0.7}}, {"b", {0.4, 0.1, 0.9, 0.3, 0.2}}});
  const auto t2 = table_of({{"b", {0.4, 0.1, 0.9, 0.3, 0.2}}, {"a", {0.1, 0.3, 0.2, 0.05, 0.7}}});
  EXPECT_NEAR(mean_corruption_error(t1), mean_corruption_error(t2), 1e-15);
}

TEST(CorruptionError, PooledErrorEqualsMuCE) {
  // Equal-sized per-severity sets: muCE equals the error over the pooled set.
  const std::size_t n = 8;
  CorruptionErrorTable t;
  std::size_t pooled_wrong = 0, pooled_total = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t s = 1; s <= 5; ++s) {
      PredictionMatrix m(n, 2);
      LabelVector y(n, 0);
      const std::size_t wrong = (c * 5 + s) % (n + 1);
      for (std::size_t i = 0; i < n; ++i) {
        m(i, 0) = i < wrong ? 0.2 : 0.8;
        m(i, 1) = 1.0 - m(i, 0);
      }
      t.set("c" + std::to_string(c), s, 1.0 - accuracy(m, y));
      pooled_wrong += wrong;
      pooled_total += n;
    }
  EXPECT_NEAR(mean_corruption_error(t), static_cast<double>(pooled_wrong) / pooled_total, 1e-15);
}

TEST(CorruptionTable, TextRoundTripAndValidation) {
  const auto t = table_of({{"gaussian_noise", {0.1, 0.2, 0.3, 0.4, 0.5}}, {"fog", {0.05, 0.1, 0.15, 0.2, 0.25}}});
  const auto back = parse_corruption_table(serialize_corruption_table(t));
  EXPECT_EQ(back.corruptions(), t.corruptions());
  for (const auto& c : t.corruptions()) EXPECT_EQ(back.row(c), t.row(c));
  EXPECT_THROW(parse_corruption_table("fog 0.1 0.2 0.3 0.4 0.5\n"), DataError);
  EXPECT_THROW(parse_corruption_table("corruption 1 2 3 4 5\nfog 0.1 0.2\n"), DataError);
  EXPECT_THROW(parse_corruption_table("corruption 1 2 3 4 5\nfog 0.1 0.2 0.3 0.4 1.5\n"), DataError);
  CorruptionErrorTable partial;
  partial.set("fog", 1, 0.1);
  EXPECT_THROW(partial.row("fog"), DataError);
}
