#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "image.hpp"
#include "prediction.hpp"
#include "rng.hpp"

namespace tta {

struct LabeledImages {
  std::vector<ImageBuffer> images;
  LabelVector labels;
};

inline constexpr std::size_t kShapeClasses = 3;  // 0 circle, 1 square, 2 triangle

/// Bright colored shape (circle, square or upward triangle) with jittered
/// position and size on a dark striped, noisy background.
inline ImageBuffer render_shape(std::uint32_t label, Rng& rng, std::size_t side = 32) {
  ImageBuffer img(side, side, 3);
  double base[3];
  for (double& b : base) b = rng.uniform(20.0, 70.0);
  const double freq = rng.uniform(0.2, 0.8);
  const double angle = rng.uniform(0.0, 3.141592653589793);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double amp = rng.uniform(8.0, 22.0);
  const double fx = std::cos(angle) * freq;
  const double fy = std::sin(angle) * freq;

  const double half = static_cast<double>(side) / 2.0;
  const double cx = half + rng.uniform(-4.0, 4.0);
  const double cy = half + rng.uniform(-4.0, 4.0);
  const double r = rng.uniform(0.22, 0.34) * static_cast<double>(side);
  double color[3];
  for (double& c : color) c = rng.uniform(140.0, 255.0);

  auto inside = [&](double x, double y) {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (label) {
      case 0: return dx * dx + dy * dy <= r * r;
      case 1: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
      default: {
        // Apex at the top, base at the bottom.
        const double top = cy - r;
        const double bottom = cy + 0.8 * r;
        if (y < top || y > bottom) return false;
        const double halfw = (y - top) / (bottom - top) * r * 1.1;
        return std::abs(dx) <= halfw;
      }
    }
  };

  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const bool in = inside(px, py);
      const double stripe = amp * std::sin(fx * px + fy * py + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-10.0, 10.0);
        const double v = in ? color[c] + 0.5 * noise : base[c] + stripe + noise;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
      }
    }
  return img;
}

/// Balanced-in-expectation synthetic split. Image i of split `tag` draws from
/// derive_seed(seed, {tag, i}).
inline LabeledImages make_shapes_dataset(std::size_t count, std::uint64_t seed, std::uint64_t tag,
                                         std::size_t side = 32) {
  LabeledImages out;
  out.images.reserve(count);
  out.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {tag, i}));
    const auto label = static_cast<std::uint32_t>(rng.below(kShapeClasses));
    out.images.push_back(render_shape(label, rng, side));
    out.labels.push_back(label);
  }
  return out;
}

}  // namespace tta
