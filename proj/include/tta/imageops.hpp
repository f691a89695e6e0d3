#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "transform.hpp"

namespace tta {

/// Knobs for the positional steps. Zero crop sizes mean "same as the input".
struct ApplyConfig {
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;
  double scale_min = 0.7;  // ScaleCropFlip window side, fraction of the shorter side
  double scale_max = 1.0;
  std::size_t cifar_pad = 4;
  bool positional = true;  // false skips the CIFAR crop/flip and ScaleCropFlip steps
  std::uint8_t cutout_fill = 128;
};

/// Window selector for TransformKind::Crop, stored as the instance magnitude.
enum class CropWindow : int { Center = 0, TopLeft = 1, TopRight = 2, BottomLeft = 3, BottomRight = 4 };

namespace imageops {

inline std::uint8_t clamp_byte(double v) {
  const double r = std::nearbyint(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// Symmetric (edge-repeating) mirror index into [0, n).
inline std::ptrdiff_t mirror_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (i >= 0 && i < n) return i;
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Bilinear tap positions and weights for one continuous pixel-centre
/// coordinate, with the mirrored background folded into the indices.
struct BilinearTap {
  std::size_t y0, y1, x0, x1;
  double wy, wx;
};

inline BilinearTap bilinear_tap(const ImageBuffer& img, double y, double x) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const auto h = static_cast<std::ptrdiff_t>(img.height());
  const auto w = static_cast<std::ptrdiff_t>(img.width());
  const auto iy = static_cast<std::ptrdiff_t>(fy);
  const auto ix = static_cast<std::ptrdiff_t>(fx);
  return {static_cast<std::size_t>(mirror_index(iy, h)), static_cast<std::size_t>(mirror_index(iy + 1, h)),
          static_cast<std::size_t>(mirror_index(ix, w)), static_cast<std::size_t>(mirror_index(ix + 1, w)),
          y - fy, x - fx};
}

inline double sample(const ImageBuffer& img, const BilinearTap& t, std::size_t c) {
  const double top = img.at(t.y0, t.x0, c) * (1.0 - t.wx) + img.at(t.y0, t.x1, c) * t.wx;
  const double bottom = img.at(t.y1, t.x0, c) * (1.0 - t.wx) + img.at(t.y1, t.x1, c) * t.wx;
  return top * (1.0 - t.wy) + bottom * t.wy;
}

/// Bilinear sample at continuous pixel-centre coordinates with mirrored background.
inline double sample_bilinear(const ImageBuffer& img, double y, double x, std::size_t c) {
  return sample(img, bilinear_tap(img, y, x), c);
}

/// Inverse-maps every output pixel through the 2x3 affine `a` (output -> source,
/// coordinates relative to the image centre).
inline ImageBuffer warp_affine(const ImageBuffer& img, const std::array<double, 6>& a) {
  ImageBuffer out(img.height(), img.width(), img.channels());
  const double cy = (static_cast<double>(img.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    const double dy = static_cast<double>(y) - cy;
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double sx = cx + a[0] * dx + a[1] * dy + a[2];
      const double sy = cy + a[3] * dx + a[4] * dy + a[5];
      const auto tap = bilinear_tap(img, sy, sx);
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = clamp_byte(sample(img, tap, c));
    }
  }
  return out;
}

template <class F>
ImageBuffer map_lut(const ImageBuffer& img, F&& lut_for_channel) {
  ImageBuffer out = img;
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const std::array<std::uint8_t, 256> lut = lut_for_channel(c);
    for (std::size_t i = c; i < out.size(); i += img.channels()) out.data()[i] = lut[out.data()[i]];
  }
  return out;
}

inline std::array<std::size_t, 256> histogram(const ImageBuffer& img, std::size_t c) {
  std::array<std::size_t, 256> h{};
  for (std::size_t i = c; i < img.size(); i += img.channels()) ++h[img.data()[i]];
  return h;
}

inline std::uint8_t luma(const ImageBuffer& img, std::size_t y, std::size_t x) {
  if (img.channels() < 3) return img.at(y, x, 0);
  const unsigned v = 299u * img.at(y, x, 0) + 587u * img.at(y, x, 1) + 114u * img.at(y, x, 2);
  return static_cast<std::uint8_t>((v + 500u) / 1000u);
}

/// out = degenerate + factor * (img - degenerate), rounded and clamped.
inline ImageBuffer blend(const ImageBuffer& degenerate, const ImageBuffer& img, double factor) {
  ImageBuffer out(img.height(), img.width(), img.channels());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = degenerate.data()[i];
    out.data()[i] = clamp_byte(d + factor * (static_cast<double>(img.data()[i]) - d));
  }
  return out;
}

inline ImageBuffer autocontrast(const ImageBuffer& img, double cutoff_percent) {
  return map_lut(img, [&](std::size_t c) {
    auto h = histogram(img, c);
    std::size_t n = 0;
    for (auto v : h) n += v;
    const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cutoff_percent / 100.0));
    auto trim = [&h](std::size_t amount, bool from_low) {
      for (int k = 0; k < 256 && amount > 0; ++k) {
        auto& bin = h[static_cast<std::size_t>(from_low ? k : 255 - k)];
        const auto take = std::min(amount, bin);
        bin -= take;
        amount -= take;
      }
    };
    trim(cut, true);
    trim(cut, false);
    int lo = 0;
    while (lo < 256 && h[static_cast<std::size_t>(lo)] == 0) ++lo;
    int hi = 255;
    while (hi >= 0 && h[static_cast<std::size_t>(hi)] == 0) --hi;
    std::array<std::uint8_t, 256> lut{};
    for (int i = 0; i < 256; ++i) lut[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    if (hi <= lo) return lut;
    const double scale = 255.0 / (hi - lo);
    const double offset = -lo * scale;
    for (int i = 0; i < 256; ++i) {
      const double v = std::trunc(i * scale + offset);
      lut[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return lut;
  });
}

inline ImageBuffer equalize(const ImageBuffer& img) {
  return map_lut(img, [&](std::size_t c) {
    const auto h = histogram(img, c);
    std::array<std::uint8_t, 256> lut{};
    for (int i = 0; i < 256; ++i) lut[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i);
    int last = 255;
    while (last >= 0 && h[static_cast<std::size_t>(last)] == 0) --last;
    if (last < 0) return lut;
    std::size_t total = 0;
    for (auto v : h) total += v;
    const std::size_t step = (total - h[static_cast<std::size_t>(last)]) / 255;
    if (step == 0) return lut;
    std::size_t n = step / 2;
    for (std::size_t i = 0; i < 256; ++i) {
      lut[i] = static_cast<std::uint8_t>(std::min<std::size_t>(n / step, 255));
      n += h[i];
    }
    return lut;
  });
}

/// 3x3 smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13, border pixels untouched.
inline ImageBuffer smooth(const ImageBuffer& img) {
  ImageBuffer out = img;
  if (img.height() < 3 || img.width() < 3) return out;
  for (std::size_t y = 1; y + 1 < img.height(); ++y)
    for (std::size_t x = 1; x + 1 < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) {
        unsigned sum = 4u * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) sum += img.at(y + dy, x + dx, c);
        out.at(y, x, c) = clamp_byte(sum / 13.0);
      }
  return out;
}

inline ImageBuffer flip_x(const ImageBuffer& img) {
  ImageBuffer out(img.height(), img.width(), img.channels());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

/// Integer-offset crop; the window may extend past the border (mirrored).
inline ImageBuffer crop(const ImageBuffer& img, std::ptrdiff_t top, std::ptrdiff_t left,
                        std::size_t height, std::size_t width) {
  ImageBuffer out(height, width, img.channels());
  const auto h = static_cast<std::ptrdiff_t>(img.height());
  const auto w = static_cast<std::ptrdiff_t>(img.width());
  for (std::size_t y = 0; y < height; ++y) {
    const auto sy = mirror_index(top + static_cast<std::ptrdiff_t>(y), h);
    for (std::size_t x = 0; x < width; ++x) {
      const auto sx = mirror_index(left + static_cast<std::ptrdiff_t>(x), w);
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

/// Bilinear resize of the window [top, top+wh) x [left, left+ww) to out_h x out_w.
inline ImageBuffer resize_window(const ImageBuffer& img, std::size_t top, std::size_t left,
                                 std::size_t wh, std::size_t ww, std::size_t out_h,
                                 std::size_t out_w) {
  if (wh == out_h && ww == out_w)
    return crop(img, static_cast<std::ptrdiff_t>(top), static_cast<std::ptrdiff_t>(left), wh, ww);
  ImageBuffer out(out_h, out_w, img.channels());
  const double sy = static_cast<double>(wh) / static_cast<double>(out_h);
  const double sx = static_cast<double>(ww) / static_cast<double>(out_w);
  // Separable grid: column taps are shared by every row.
  std::vector<BilinearTap> cols(out_w);
  for (std::size_t x = 0; x < out_w; ++x) {
    const double src_x = static_cast<double>(left) + (static_cast<double>(x) + 0.5) * sx - 0.5;
    cols[x] = bilinear_tap(img, 0.0, src_x);
  }
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src_y = static_cast<double>(top) + (static_cast<double>(y) + 0.5) * sy - 0.5;
    const auto row = bilinear_tap(img, src_y, 0.0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const BilinearTap tap{row.y0, row.y1, cols[x].x0, cols[x].x1, row.wy, cols[x].wx};
      for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = clamp_byte(sample(img, tap, c));
    }
  }
  return out;
}

inline std::pair<std::size_t, std::size_t> crop_size(const ImageBuffer& img, const ApplyConfig& cfg) {
  const std::size_t h = cfg.crop_height ? cfg.crop_height : img.height();
  const std::size_t w = cfg.crop_width ? cfg.crop_width : img.width();
  if (h > img.height() || w > img.width())
    throw UsageError("crop target " + std::to_string(h) + "x" + std::to_string(w) +
                     " exceeds image " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()));
  return {h, w};
}

inline ImageBuffer scale_crop_flip(const ImageBuffer& img, const ApplyConfig& cfg, Rng& rng) {
  const auto [th, tw] = crop_size(img, cfg);
  if (!(cfg.scale_min > 0.0 && cfg.scale_min <= cfg.scale_max && cfg.scale_max <= 1.0))
    throw UsageError("ScaleCropFlip scale interval must satisfy 0 < min <= max <= 1");
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double side = scale * static_cast<double>(std::min(img.height(), img.width()));
  const double longest = static_cast<double>(std::max(th, tw));
  const auto wh = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(side * static_cast<double>(th) / longest)), 1, img.height());
  const auto ww = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(side * static_cast<double>(tw) / longest)), 1, img.width());
  const auto top = static_cast<std::size_t>(rng.below(img.height() - wh + 1));
  const auto left = static_cast<std::size_t>(rng.below(img.width() - ww + 1));
  ImageBuffer out = resize_window(img, top, left, wh, ww, th, tw);
  return rng.coin() ? flip_x(out) : out;
}

inline ImageBuffer fixed_crop(const ImageBuffer& img, const ApplyConfig& cfg, CropWindow where) {
  const auto [th, tw] = crop_size(img, cfg);
  const std::size_t dy = img.height() - th;
  const std::size_t dx = img.width() - tw;
  std::size_t top = dy / 2;
  std::size_t left = dx / 2;
  switch (where) {
    case CropWindow::Center: break;
    case CropWindow::TopLeft: top = 0; left = 0; break;
    case CropWindow::TopRight: top = 0; left = dx; break;
    case CropWindow::BottomLeft: top = dy; left = 0; break;
    case CropWindow::BottomRight: top = dy; left = dx; break;
  }
  return crop(img, static_cast<std::ptrdiff_t>(top), static_cast<std::ptrdiff_t>(left), th, tw);
}

/// Pads by `pad` on every side with mirrored content, crops back to the input
/// size at a uniform offset, then flips horizontally with probability 1/2.
inline ImageBuffer random_crop_flip(const ImageBuffer& img, std::size_t pad, Rng& rng) {
  const auto span = 2 * pad + 1;
  const auto dy = static_cast<std::ptrdiff_t>(rng.below(span)) - static_cast<std::ptrdiff_t>(pad);
  const auto dx = static_cast<std::ptrdiff_t>(rng.below(span)) - static_cast<std::ptrdiff_t>(pad);
  ImageBuffer out = crop(img, dy, dx, img.height(), img.width());
  return rng.coin() ? flip_x(out) : out;
}

}  // namespace imageops

/// Applies one transform. Randomness consumed per kind: a sign for geometric and
/// enhance ops, a position for Cutout, scale/position/flip for ScaleCropFlip.
inline ImageBuffer apply_transform(const ImageBuffer& img, const TransformInstance& t, Rng& rng,
                                   const ApplyConfig& cfg = {}) {
  using namespace imageops;
  const double v = t.param();
  switch (t.kind) {
    case TransformKind::Identity:
      return img;
    case TransformKind::ShearX: {
      const double s = rng.sign() * v;
      if (v == 0.0) return img;
      return warp_affine(img, {1.0, s, 0.0, 0.0, 1.0, 0.0});
    }
    case TransformKind::ShearY: {
      const double s = rng.sign() * v;
      if (v == 0.0) return img;
      return warp_affine(img, {1.0, 0.0, 0.0, s, 1.0, 0.0});
    }
    case TransformKind::TranslateX: {
      const double s = rng.sign() * v * static_cast<double>(img.width());
      if (v == 0.0) return img;
      return warp_affine(img, {1.0, 0.0, -s, 0.0, 1.0, 0.0});
    }
    case TransformKind::TranslateY: {
      const double s = rng.sign() * v * static_cast<double>(img.height());
      if (v == 0.0) return img;
      return warp_affine(img, {1.0, 0.0, 0.0, 0.0, 1.0, -s});
    }
    case TransformKind::Rotate: {
      const double deg = rng.sign() * v;
      if (v == 0.0) return img;
      const double r = deg * std::numbers::pi / 180.0;
      const double c = std::cos(r);
      const double s = std::sin(r);
      return warp_affine(img, {c, -s, 0.0, s, c, 0.0});
    }
    case TransformKind::Autocontrast:
      return autocontrast(img, v);
    case TransformKind::Solarize: {
      ImageBuffer out = img;
      for (auto& p : out.data())
        if (p >= v) p = static_cast<std::uint8_t>(255 - p);
      return out;
    }
    case TransformKind::SolarizeAdd: {
      // Pixels below 128 are brightened by (256 - v); v = 256 is the identity.
      const double add = 256.0 - v;
      ImageBuffer out = img;
      for (auto& p : out.data())
        if (p < 128) p = clamp_byte(p + add);
      return out;
    }
    case TransformKind::Posterize: {
      const int bits = static_cast<int>(std::floor(v));
      const auto mask = static_cast<std::uint8_t>(bits <= 0 ? 0 : (0xFF << (8 - std::min(bits, 8))) & 0xFF);
      ImageBuffer out = img;
      for (auto& p : out.data()) p = static_cast<std::uint8_t>(p & mask);
      return out;
    }
    case TransformKind::Contrast: {
      const double factor = 1.0 + rng.sign() * v;
      double sum = 0.0;
      for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x) sum += luma(img, y, x);
      const double pixels = static_cast<double>(img.height() * img.width());
      const auto mean = pixels > 0 ? static_cast<std::uint8_t>(std::floor(sum / pixels + 0.5)) : 0;
      return blend(ImageBuffer(img.height(), img.width(), img.channels(), mean), img, factor);
    }
    case TransformKind::Brightness: {
      const double factor = 1.0 + rng.sign() * v;
      return blend(ImageBuffer(img.height(), img.width(), img.channels(), 0), img, factor);
    }
    case TransformKind::Color: {
      const double factor = 1.0 + rng.sign() * v;
      ImageBuffer gray(img.height(), img.width(), img.channels());
      for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x) {
          const auto l = luma(img, y, x);
          for (std::size_t c = 0; c < img.channels(); ++c) gray.at(y, x, c) = l;
        }
      return blend(gray, img, factor);
    }
    case TransformKind::Sharpness: {
      const double factor = 1.0 + rng.sign() * v;
      return blend(smooth(img), img, factor);
    }
    case TransformKind::Cutout: {
      const auto ch = std::min<std::size_t>(
          img.height(), static_cast<std::size_t>(std::lround(v * static_cast<double>(img.height()))));
      const auto cw = std::min<std::size_t>(
          img.width(), static_cast<std::size_t>(std::lround(v * static_cast<double>(img.width()))));
      const auto top = static_cast<std::size_t>(rng.below(img.height() - ch + 1));
      const auto left = static_cast<std::size_t>(rng.below(img.width() - cw + 1));
      ImageBuffer out = img;
      for (std::size_t y = top; y < top + ch; ++y)
        for (std::size_t x = left; x < left + cw; ++x)
          for (std::size_t c = 0; c < img.channels(); ++c) out.at(y, x, c) = cfg.cutout_fill;
      return out;
    }
    case TransformKind::Invert: {
      ImageBuffer out = img;
      for (auto& p : out.data()) p = static_cast<std::uint8_t>(255 - p);
      return out;
    }
    case TransformKind::Equalize:
      return equalize(img);
    case TransformKind::ScaleCropFlip:
      return scale_crop_flip(img, cfg, rng);
    case TransformKind::Crop: {
      const auto code = static_cast<int>(std::lround(t.magnitude));
      if (code < 0 || code > 4) throw UsageError("Crop window code must be 0..4");
      return fixed_crop(img, cfg, static_cast<CropWindow>(code));
    }
    case TransformKind::FlipX:
      return flip_x(img);
  }
  throw UsageError("invalid transform kind");
}

/// Runs the chain in order. CIFAR-style chains are followed by a mirrored
/// random crop and flip; ImageNet-style chains already carry their leading
/// ScaleCropFlip. `cfg.positional = false` drops both positional steps.
inline ImageBuffer apply_subpolicy(const ImageBuffer& img, const SubPolicy& s, Rng& rng,
                                   const ApplyConfig& cfg = {}) {
  ImageBuffer cur = img;
  for (const auto& t : s.transforms) {
    if (!cfg.positional && t.kind == TransformKind::ScaleCropFlip) continue;
    cur = apply_transform(cur, t, rng, cfg);
  }
  if (s.style == PolicyStyle::Cifar && cfg.positional)
    cur = imageops::random_crop_flip(cur, cfg.cifar_pad, rng);
  return cur;
}

}  // namespace tta
