#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace tta {

enum class TransformKind : std::uint8_t {
  Identity,
  ShearX,
  ShearY,
  TranslateX,
  TranslateY,
  Rotate,
  Autocontrast,
  Solarize,
  SolarizeAdd,
  Posterize,
  Contrast,
  Brightness,
  Color,
  Sharpness,
  Cutout,
  Invert,
  Equalize,
  ScaleCropFlip,
  // Deterministic positional steps used by the multi-crop presets. Never drawn
  // by the sampler. For Crop the magnitude selects the window, see CropWindow.
  Crop,
  FlipX,
};

inline constexpr std::array<std::string_view, 20> kTransformNames = {
    "Identity",   "ShearX",   "ShearY",     "TranslateX", "TranslateY",
    "Rotate",     "Autocontrast", "Solarize", "SolarizeAdd", "Posterize",
    "Contrast",   "Brightness", "Color",    "Sharpness",  "Cutout",
    "Invert",     "Equalize", "ScaleCropFlip", "Crop",     "FlipX"};

inline std::string_view to_string(TransformKind k) {
  const auto i = static_cast<std::size_t>(k);
  if (i >= kTransformNames.size()) throw UsageError("invalid transform kind " + std::to_string(i));
  return kTransformNames[i];
}

inline std::optional<TransformKind> parse_transform_kind(std::string_view name) {
  for (std::size_t i = 0; i < kTransformNames.size(); ++i)
    if (kTransformNames[i] == name) return static_cast<TransformKind>(i);
  return std::nullopt;
}

inline constexpr bool is_geometric(TransformKind k) {
  switch (k) {
    case TransformKind::ShearX:
    case TransformKind::ShearY:
    case TransformKind::TranslateX:
    case TransformKind::TranslateY:
    case TransformKind::Rotate:
      return true;
    default:
      return false;
  }
}

inline constexpr bool is_enhance(TransformKind k) {
  return k == TransformKind::Contrast || k == TransformKind::Brightness ||
         k == TransformKind::Color || k == TransformKind::Sharpness;
}

inline constexpr bool is_positional(TransformKind k) {
  return k == TransformKind::ScaleCropFlip || k == TransformKind::Crop || k == TransformKind::FlipX;
}

/// Maps a frozen magnitude M~ to the operation parameter v:
///   shear, cutout      v = M/60          (fraction)
///   translate          v = 0.015 M       (fraction of the image side)
///   rotate             v = 4M/3          (degrees)
///   autocontrast       v = M/3           (histogram cutoff, percent)
///   solarize(add)      v = 256 - 64M/15  (threshold)
///   posterize          v = max(0, 8 - 0.2M) (bits kept)
///   contrast/brightness v = 2M/75, color/sharpness v = 0.03M (enhance strength)
/// Parameterless kinds return 0.
inline double magnitude_to_param(TransformKind kind, double m) {
  if (!(m >= 0.0)) throw UsageError("magnitude must be >= 0");
  switch (kind) {
    case TransformKind::ShearX:
    case TransformKind::ShearY:
    case TransformKind::Cutout:
      return m / 60.0;
    case TransformKind::TranslateX:
    case TransformKind::TranslateY:
      return 0.015 * m;
    case TransformKind::Rotate:
      return 4.0 * m / 3.0;
    case TransformKind::Autocontrast:
      return m / 3.0;
    case TransformKind::Solarize:
    case TransformKind::SolarizeAdd:
      return 256.0 - 64.0 * m / 15.0;
    case TransformKind::Posterize:
      return std::max(0.0, 8.0 - 0.2 * m);
    case TransformKind::Contrast:
    case TransformKind::Brightness:
      return 2.0 * m / 75.0;
    case TransformKind::Color:
    case TransformKind::Sharpness:
      return 0.03 * m;
    case TransformKind::Identity:
    case TransformKind::Invert:
    case TransformKind::Equalize:
    case TransformKind::ScaleCropFlip:
    case TransformKind::Crop:
    case TransformKind::FlipX:
      return 0.0;
  }
  throw UsageError("invalid transform kind " + std::to_string(static_cast<int>(kind)));
}

struct TransformInstance {
  TransformKind kind = TransformKind::Identity;
  double magnitude = 0.0;

  double param() const { return magnitude_to_param(kind, magnitude); }
  friend bool operator==(const TransformInstance&, const TransformInstance&) = default;
};

/// Where the positional step sits in a sub-policy.
///   Cifar:    sampled ops, then random crop (mirror padding) and horizontal flip
///   ImageNet: ScaleCropFlip first (not counted in N), then sampled ops
///   Bare:     sampled ops only
enum class PolicyStyle : std::uint8_t { Cifar, ImageNet, Bare };

inline std::string_view to_string(PolicyStyle s) {
  switch (s) {
    case PolicyStyle::Cifar: return "cifar";
    case PolicyStyle::ImageNet: return "imagenet";
    case PolicyStyle::Bare: return "bare";
  }
  throw UsageError("invalid policy style");
}

inline std::optional<PolicyStyle> parse_policy_style(std::string_view s) {
  if (s == "cifar") return PolicyStyle::Cifar;
  if (s == "imagenet") return PolicyStyle::ImageNet;
  if (s == "bare") return PolicyStyle::Bare;
  return std::nullopt;
}

struct SubPolicy {
  std::vector<TransformInstance> transforms;
  PolicyStyle style = PolicyStyle::Bare;
  std::uint32_t id = 0;

  /// Number of sampled ops, i.e. N without the leading ScaleCropFlip.
  std::size_t length() const {
    return style == PolicyStyle::ImageNet && !transforms.empty() ? transforms.size() - 1
                                                                  : transforms.size();
  }

  friend bool operator==(const SubPolicy&, const SubPolicy&) = default;
};

/// Checks the structural invariants: at least one step, non-negative
/// magnitudes, ScaleCropFlip exactly at the head of ImageNet-style chains.
inline void validate(const SubPolicy& s) {
  const std::string where = "sub-policy " + std::to_string(s.id);
  if (s.transforms.empty()) throw DataError(where + " has no transforms");
  for (std::size_t i = 0; i < s.transforms.size(); ++i) {
    const auto& t = s.transforms[i];
    if (static_cast<std::size_t>(t.kind) >= kTransformNames.size())
      throw DataError(where + ": invalid transform kind");
    if (!(t.magnitude >= 0.0)) throw DataError(where + ": negative magnitude");
    const bool scf = t.kind == TransformKind::ScaleCropFlip;
    if (scf && !(s.style == PolicyStyle::ImageNet && i == 0))
      throw DataError(where + ": ScaleCropFlip only allowed as the first step of an imagenet sub-policy");
  }
  if (s.style == PolicyStyle::ImageNet && s.transforms.front().kind != TransformKind::ScaleCropFlip)
    throw DataError(where + ": imagenet sub-policy must start with ScaleCropFlip");
}

/// Ordered multiset of sub-policies. Repeats are allowed.
struct Policy {
  std::vector<SubPolicy> subpolicies;

  std::size_t size() const noexcept { return subpolicies.size(); }
  bool empty() const noexcept { return subpolicies.empty(); }
  friend bool operator==(const Policy&, const Policy&) = default;
};

}  // namespace tta
