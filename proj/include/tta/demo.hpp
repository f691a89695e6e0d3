#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "adapter.hpp"
#include "calibrate.hpp"
#include "gps.hpp"
#include "imageops.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "synthetic.hpp"

namespace tta {

/// Desk-scale end-to-end run: synthetic shapes, toy classifier, pool, GPS.
struct DeskDemoConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  // ImageNet-style pool scaled down to 101 sub-policies, ScaleCropFlip-only segment included.
  PoolRecipe recipe{{{30, 2, 45.0}, {30, 2, 20.0}, {10, 3, 10.0}, {10, 1, 45.0}, {20, 0, 0.0, true}},
                    false,
                    PolicyStyle::ImageNet};
  // Appends the un-augmented view as one more pool member.
  bool include_clean = true;
  bool scale_crop_flip_training = false;
  std::size_t policy_size = 20;
  SearchObjective objective = SearchObjective::CalibratedLL;
  std::size_t crop_flip_samples = 20;
  std::size_t n_splits = 5;
  std::size_t workers = 1;
  ToyTrainConfig train;
};

struct DeskDemoResult {
  MetricReport gps;
  MetricReport crop_flip;
  MetricReport identity;
  std::vector<std::size_t> policy_ids;
  SearchTrace trace;
  double clean_val_accuracy = 0.0;
};

/// Predictions of every sub-policy in `pool` on `images`, one matrix per id.
inline std::vector<PredictionMatrix> predict_pool(ModelAdapter& model, std::span<const ImageBuffer> images,
                                                  std::span<const SubPolicy> pool, std::uint64_t seed,
                                                  std::size_t workers, const ApplyConfig& cfg = {}) {
  std::vector<PredictionMatrix> out(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t b) {
    out[b] = predict_under_subpolicy(model, images, pool[b], seed, 1, cfg);
  });
  return out;
}

inline DeskDemoResult run_desk_demo(const DeskDemoConfig& cfg) {
  const auto train = make_shapes_dataset(cfg.n_train, cfg.seed, 0);
  const auto val = make_shapes_dataset(cfg.n_val, cfg.seed, 1);
  const auto test = make_shapes_dataset(cfg.n_test, cfg.seed, 2);

  // Light training augmentation: one padded-crop-and-flip copy per image.
  std::vector<ImageBuffer> train_images = train.images;
  LabelVector train_labels = train.labels;
  for (std::size_t i = 0; i < train.images.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, {10, i}));
    train_images.push_back(cfg.scale_crop_flip_training
                               ? imageops::scale_crop_flip(train.images[i], ApplyConfig{}, rng)
                               : imageops::random_crop_flip(train.images[i], 4, rng));
    train_labels.push_back(train.labels[i]);
  }
  ToyClassifier model = ToyClassifier::train(train_images, train_labels, cfg.train);

  Rng pool_rng(derive_seed(cfg.seed, {11}));
  auto pool = generate_pool(cfg.recipe, pool_rng);
  if (cfg.include_clean) {
    pool.push_back(identity_subpolicy(PolicyStyle::Bare));
    pool.back().id = static_cast<std::uint32_t>(pool.size() - 1);
  }
  const auto val_preds = predict_pool(model, val.images, pool, derive_seed(cfg.seed, {12}), cfg.workers);
  const auto test_preds = predict_pool(model, test.images, pool, derive_seed(cfg.seed, {13}), cfg.workers);

  DeskDemoResult result;
  auto search = greedy_search(val_preds, val.labels, cfg.policy_size, cfg.objective, cfg.workers);
  result.policy_ids = search.ids;
  result.trace = search.trace;

  const std::uint64_t cv_seed = derive_seed(cfg.seed, {15});
  result.gps = test_time_cross_validation(policy_predictions(test_preds, search.ids), test.labels,
                                          cfg.n_splits, cv_seed);

  const auto cf_recipe = std::get<PoolRecipe>(preset_policy(PresetName::CropFlip, cfg.crop_flip_samples));
  Rng cf_rng(derive_seed(cfg.seed, {16}));
  const auto cf_pool = generate_pool(cf_recipe, cf_rng);
  const auto cf_preds = predict_pool(model, test.images, cf_pool, derive_seed(cfg.seed, {14}), cfg.workers);
  result.crop_flip = test_time_cross_validation(average_predictions(cf_preds), test.labels, cfg.n_splits, cv_seed);

  const SubPolicy clean = identity_subpolicy(PolicyStyle::Bare);
  result.identity = test_time_cross_validation(predict_under_subpolicy(model, test.images, clean, 0),
                                               test.labels, cfg.n_splits, cv_seed);
  result.clean_val_accuracy = accuracy(predict_under_subpolicy(model, val.images, clean, 0), val.labels);
  return result;
}

}  // namespace tta
