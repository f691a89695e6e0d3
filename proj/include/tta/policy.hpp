#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "error.hpp"
#include "rng.hpp"
#include "transform.hpp"

namespace tta {

/// Kinds the sampler draws from. Identity is drawable; Invert and Equalize are
/// ImageNet-only.
inline std::vector<TransformKind> legal_kinds(PolicyStyle style) {
  std::vector<TransformKind> kinds = {
      TransformKind::Identity,   TransformKind::ShearX,      TransformKind::ShearY,
      TransformKind::TranslateX, TransformKind::TranslateY,  TransformKind::Rotate,
      TransformKind::Autocontrast, TransformKind::Solarize,  TransformKind::SolarizeAdd,
      TransformKind::Posterize,  TransformKind::Contrast,    TransformKind::Brightness,
      TransformKind::Color,      TransformKind::Sharpness,   TransformKind::Cutout};
  if (style == PolicyStyle::ImageNet) {
    kinds.push_back(TransformKind::Invert);
    kinds.push_back(TransformKind::Equalize);
  }
  return kinds;
}

/// Magnitudes are frozen at micro-unit resolution so that the text format
/// (six decimals) round-trips them exactly.
inline double quantize_magnitude(double m, double cap) {
  return std::min(std::round(m * 1e6) / 1e6, cap);
}

inline SubPolicy sample_subpolicy(std::size_t n, double max_magnitude, PolicyStyle style, Rng& rng,
                                  std::span<const TransformKind> kinds) {
  if (n < 1) throw UsageError("sub-policy length N must be >= 1");
  if (!(max_magnitude >= 0.0)) throw UsageError("magnitude cap M must be >= 0");
  if (kinds.empty()) throw UsageError("no legal transform kinds to sample from");
  SubPolicy s;
  s.style = style;
  if (style == PolicyStyle::ImageNet) s.transforms.push_back({TransformKind::ScaleCropFlip, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    const TransformKind kind = kinds[rng.below(kinds.size())];
    const double m = quantize_magnitude(rng.uniform(0.0, max_magnitude), max_magnitude);
    s.transforms.push_back({kind, m});
  }
  return s;
}

inline SubPolicy sample_subpolicy(std::size_t n, double max_magnitude, PolicyStyle style, Rng& rng) {
  const auto kinds = legal_kinds(style);
  return sample_subpolicy(n, max_magnitude, style, rng, kinds);
}

/// A block of sub-policies drawn with the same N and M. `scale_crop_flip_only`
/// segments produce bare ScaleCropFlip sub-policies (ImageNet style).
struct PoolSegment {
  std::size_t count = 0;
  std::size_t n = 0;
  double m = 0.0;
  bool scale_crop_flip_only = false;
  friend bool operator==(const PoolSegment&, const PoolSegment&) = default;
};

struct PoolRecipe {
  std::vector<PoolSegment> segments;
  bool include_identity = false;
  PolicyStyle style = PolicyStyle::Cifar;

  std::size_t pool_size() const {
    std::size_t total = include_identity ? 1 : 0;
    for (const auto& s : segments) total += s.count;
    return total;
  }
  friend bool operator==(const PoolRecipe&, const PoolRecipe&) = default;
};

inline void validate(const PoolRecipe& r) {
  for (const auto& s : r.segments) {
    if (s.count == 0) throw UsageError("recipe segment count must be > 0");
    if (!s.scale_crop_flip_only && s.n == 0) throw UsageError("recipe segment N must be >= 1");
    if (!(s.m >= 0.0)) throw UsageError("recipe segment M must be >= 0");
    if (s.scale_crop_flip_only && r.style != PolicyStyle::ImageNet)
      throw UsageError("scale-crop-flip-only segments require the imagenet style");
  }
  if (r.pool_size() == 0) throw UsageError("recipe produces an empty pool");
}

/// CIFAR pool: 500 at N=3/M=45, 500 at N=3/M=20, 100 at N=3/M=0, plus identity (1101).
inline PoolRecipe cifar_default_recipe() {
  return {{{500, 3, 45.0}, {500, 3, 20.0}, {100, 3, 0.0}}, true, PolicyStyle::Cifar};
}

/// ImageNet pool: 300 N2/M45, 300 N2/M20, 100 N3/M10, 100 N1/M45 and 100
/// scale-crop-flip-only (900).
inline PoolRecipe imagenet_default_recipe() {
  return {{{300, 2, 45.0}, {300, 2, 20.0}, {100, 3, 10.0}, {100, 1, 45.0}, {100, 0, 0.0, true}},
          false,
          PolicyStyle::ImageNet};
}

inline SubPolicy identity_subpolicy(PolicyStyle style) {
  SubPolicy s;
  s.style = style;
  if (style == PolicyStyle::ImageNet) s.transforms.push_back({TransformKind::ScaleCropFlip, 0.0});
  s.transforms.push_back({TransformKind::Identity, 0.0});
  return s;
}

/// Segments in order, then the identity sub-policy; ids are 0..B-1 in that order.
inline std::vector<SubPolicy> generate_pool(const PoolRecipe& recipe, Rng& rng) {
  validate(recipe);
  std::vector<SubPolicy> pool;
  pool.reserve(recipe.pool_size());
  for (const auto& seg : recipe.segments) {
    for (std::size_t i = 0; i < seg.count; ++i) {
      if (seg.scale_crop_flip_only) {
        SubPolicy s;
        s.style = PolicyStyle::ImageNet;
        s.transforms.push_back({TransformKind::ScaleCropFlip, 0.0});
        pool.push_back(std::move(s));
      } else {
        pool.push_back(sample_subpolicy(seg.n, seg.m, recipe.style, rng));
      }
    }
  }
  if (recipe.include_identity) pool.push_back(identity_subpolicy(recipe.style));
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i].id = static_cast<std::uint32_t>(i);
  return pool;
}

/// Parses "count:N:M[,count:N:M...]". A segment "count:scf" means
/// scale-crop-flip-only sub-policies.
inline std::vector<PoolSegment> parse_recipe_segments(std::string_view text) {
  std::vector<PoolSegment> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    std::vector<std::string> fields;
    std::stringstream ss(item);
    for (std::string f; std::getline(ss, f, ':');) fields.push_back(f);
    auto to_count = [&](const std::string& f) -> std::size_t {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(f, &used);
      } catch (const std::exception&) {
        throw UsageError("bad recipe segment '" + item + "': '" + f + "' is not an integer");
      }
      if (used != f.size() || v < 0)
        throw UsageError("bad recipe segment '" + item + "': '" + f + "' is not a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    PoolSegment seg;
    if (fields.size() == 2 && fields[1] == "scf") {
      seg.count = to_count(fields[0]);
      seg.scale_crop_flip_only = true;
    } else if (fields.size() == 3) {
      seg.count = to_count(fields[0]);
      seg.n = to_count(fields[1]);
      std::size_t used = 0;
      try {
        seg.m = std::stod(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[2].size() || !(seg.m >= 0.0))
        throw UsageError("bad recipe segment '" + item + "': M must be a non-negative number");
    } else {
      throw UsageError("bad recipe segment '" + item + "': expected count:N:M");
    }
    if (seg.count == 0) throw UsageError("bad recipe segment '" + item + "': count must be > 0");
    if (!seg.scale_crop_flip_only && seg.n == 0)
      throw UsageError("bad recipe segment '" + item + "': N must be >= 1");
    out.push_back(seg);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

enum class PresetName { CentralCrop, CropFlip, FiveCrop, TenCrop };

inline PresetName parse_preset_name(std::string_view name) {
  if (name == "central-crop") return PresetName::CentralCrop;
  if (name == "crop-flip") return PresetName::CropFlip;
  if (name == "5-crop") return PresetName::FiveCrop;
  if (name == "10-crop") return PresetName::TenCrop;
  throw UsageError("unknown preset '" + std::string(name) +
                   "' (expected central-crop, crop-flip, 5-crop or 10-crop)");
}

/// Baseline test-time policies. crop-flip is random, so it comes back as a
/// recipe of `crop_flip_samples` ScaleCropFlip-only sub-policies; the others
/// are fixed policies built from Crop/FlipX steps.
inline std::variant<Policy, PoolRecipe> preset_policy(PresetName name,
                                                      std::size_t crop_flip_samples = 20) {
  auto crop_step = [](CropWindow w, bool flip) {
    SubPolicy s;
    s.style = PolicyStyle::Bare;
    s.transforms.push_back({TransformKind::Crop, static_cast<double>(static_cast<int>(w))});
    if (flip) s.transforms.push_back({TransformKind::FlipX, 0.0});
    return s;
  };
  constexpr CropWindow kFive[] = {CropWindow::TopLeft, CropWindow::TopRight, CropWindow::BottomLeft,
                                  CropWindow::BottomRight, CropWindow::Center};
  Policy p;
  switch (name) {
    case PresetName::CentralCrop:
      p.subpolicies.push_back(crop_step(CropWindow::Center, false));
      break;
    case PresetName::CropFlip:
      if (crop_flip_samples == 0) throw UsageError("crop-flip preset needs at least one sample");
      return PoolRecipe{{{crop_flip_samples, 0, 0.0, true}}, false, PolicyStyle::ImageNet};
    case PresetName::FiveCrop:
      for (auto w : kFive) p.subpolicies.push_back(crop_step(w, false));
      break;
    case PresetName::TenCrop:
      for (auto w : kFive) p.subpolicies.push_back(crop_step(w, false));
      for (auto w : kFive) p.subpolicies.push_back(crop_step(w, true));
      break;
  }
  for (std::size_t i = 0; i < p.subpolicies.size(); ++i)
    p.subpolicies[i].id = static_cast<std::uint32_t>(i);
  return p;
}

// Text format:
//
//   tta-policy 1
//   size <count>
//   <id> <style> <Kind>:<magnitude> [<Kind>:<magnitude> ...]
//   ...
//
// Blank lines and lines starting with '#' are ignored. Magnitudes are written
// with six decimals.

inline std::string serialize_policy(const Policy& p) {
  std::string out = "tta-policy 1\nsize " + std::to_string(p.size()) + "\n";
  char buf[64];
  for (const auto& s : p.subpolicies) {
    out += std::to_string(s.id);
    out += ' ';
    out += to_string(s.style);
    for (const auto& t : s.transforms) {
      std::snprintf(buf, sizeof buf, " %s:%.6f", std::string(to_string(t.kind)).c_str(), t.magnitude);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline Policy parse_policy(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("policy parse error at line " + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      if (line.back() == '\r') line.pop_back();
      return true;
    }
    return false;
  };

  if (!next_line()) throw fail("empty document");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != "tta-policy") throw fail("expected header 'tta-policy 1'");
    if (version != 1) throw fail("unsupported version " + std::to_string(version));
  }
  if (!next_line()) throw fail("missing 'size' line");
  std::size_t declared = 0;
  {
    std::istringstream ls(line);
    std::string key;
    long long n = -1;
    if (!(ls >> key >> n) || key != "size" || n < 0) throw fail("expected 'size <count>'");
    declared = static_cast<std::size_t>(n);
  }
  if (declared == 0) throw fail("policy must contain at least one sub-policy");

  Policy p;
  while (next_line()) {
    std::istringstream ls(line);
    long long id = -1;
    std::string style_name;
    if (!(ls >> id) || id < 0) throw fail("field 1: expected non-negative sub-policy id");
    if (!(ls >> style_name)) throw fail("field 2: missing style");
    const auto style = parse_policy_style(style_name);
    if (!style) throw fail("field 2: unknown style '" + style_name + "'");
    SubPolicy s;
    s.id = static_cast<std::uint32_t>(id);
    s.style = *style;
    std::size_t field = 3;
    for (std::string tok; ls >> tok; ++field) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw fail("field " + std::to_string(field) + ": expected Kind:magnitude, got '" + tok + "'");
      const auto kind = parse_transform_kind(std::string_view(tok).substr(0, colon));
      if (!kind)
        throw fail("field " + std::to_string(field) + ": unknown transform '" + tok.substr(0, colon) + "'");
      const std::string mag = tok.substr(colon + 1);
      std::size_t used = 0;
      double m = -1.0;
      try {
        m = std::stod(mag, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != mag.size() || !(m >= 0.0))
        throw fail("field " + std::to_string(field) + ": bad magnitude '" + mag + "'");
      s.transforms.push_back({*kind, m});
    }
    try {
      validate(s);
    } catch (const DataError& e) {
      throw fail(e.what());
    }
    p.subpolicies.push_back(std::move(s));
  }
  if (p.size() != declared)
    throw fail("declared size " + std::to_string(declared) + " but found " + std::to_string(p.size()) +
               " sub-policies");
  return p;
}

/// Resolves the i-th entry of a policy, with a readable range error.
inline const SubPolicy& subpolicy_at(const Policy& p, std::size_t index) {
  if (index >= p.size())
    throw UsageError("sub-policy index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(p.size()) + ")");
  return p.subpolicies[index];
}

}  // namespace tta
