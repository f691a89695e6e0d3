#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace tta {

/// n_objects x n_classes class probabilities, row-major.
class PredictionMatrix {
 public:
  PredictionMatrix() = default;
  PredictionMatrix(std::size_t n_objects, std::size_t n_classes, double fill = 0.0)
      : n_objects_(n_objects), n_classes_(n_classes), data_(n_objects * n_classes, fill) {}
  PredictionMatrix(std::size_t n_objects, std::size_t n_classes, std::vector<double> data)
      : n_objects_(n_objects), n_classes_(n_classes), data_(std::move(data)) {
    if (data_.size() != n_objects_ * n_classes_)
      throw DataError("prediction payload has " + std::to_string(data_.size()) + " entries, expected " +
                      std::to_string(n_objects_ * n_classes_));
  }

  std::size_t n_objects() const noexcept { return n_objects_; }
  std::size_t n_classes() const noexcept { return n_classes_; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * n_classes_, n_classes_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_classes_, n_classes_}; }
  double& operator()(std::size_t i, std::size_t k) { return data_[i * n_classes_ + k]; }
  double operator()(std::size_t i, std::size_t k) const { return data_[i * n_classes_ + k]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const PredictionMatrix& o) const noexcept {
    return n_objects_ == o.n_objects_ && n_classes_ == o.n_classes_;
  }

  /// Index of the largest entry; ties go to the lowest class index.
  std::size_t argmax(std::size_t i) const {
    const auto r = row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k)
      if (r[k] > r[best]) best = k;
    return best;
  }

  friend bool operator==(const PredictionMatrix&, const PredictionMatrix&) = default;

 private:
  std::size_t n_objects_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<double> data_;
};

using LabelVector = std::vector<std::uint32_t>;

/// Throws unless every entry is in [0, 1] and every row sums to 1 within `tol`.
inline void check_simplex(const PredictionMatrix& m, double tol = 1e-6) {
  for (std::size_t i = 0; i < m.n_objects(); ++i) {
    double sum = 0.0;
    for (double p : m.row(i)) {
      if (!(p >= 0.0 && p <= 1.0))
        throw DataError("row " + std::to_string(i) + " has an entry outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol)
      throw DataError("row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
}

inline void check_labels(const PredictionMatrix& m, const LabelVector& y) {
  if (y.size() != m.n_objects())
    throw DataError("label count " + std::to_string(y.size()) + " does not match " +
                    std::to_string(m.n_objects()) + " prediction rows");
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] >= m.n_classes())
      throw DataError("label " + std::to_string(y[i]) + " at row " + std::to_string(i) +
                      " is not a valid class index");
}

/// Elementwise arithmetic mean of same-shaped matrices.
inline PredictionMatrix average_predictions(std::span<const PredictionMatrix> ms) {
  if (ms.empty()) throw DataError("cannot average an empty list of prediction matrices");
  PredictionMatrix out(ms[0].n_objects(), ms[0].n_classes());
  for (const auto& m : ms) {
    if (!m.same_shape(out))
      throw DataError("prediction matrix shape mismatch while averaging");
    for (std::size_t j = 0; j < out.data().size(); ++j) out.data()[j] += m.data()[j];
  }
  const double inv = 1.0 / static_cast<double>(ms.size());
  for (double& v : out.data()) v *= inv;
  return out;
}

/// Running mean with the update pi <- ((t-1)/t) pi + (1/t) m.
class RunningMean {
 public:
  explicit RunningMean(std::size_t n_objects = 0, std::size_t n_classes = 0)
      : mean_(n_objects, n_classes) {}

  std::size_t count() const noexcept { return count_; }
  const PredictionMatrix& mean() const noexcept { return mean_; }

  /// The mean that would result from adding `m`, without committing it.
  void peek(const PredictionMatrix& m, PredictionMatrix& out) const {
    if (!m.same_shape(mean_)) throw DataError("prediction matrix shape mismatch");
    const double t = static_cast<double>(count_ + 1);
    const double keep = (t - 1.0) / t;
    const double add = 1.0 / t;
    if (!out.same_shape(mean_)) out = PredictionMatrix(mean_.n_objects(), mean_.n_classes());
    for (std::size_t j = 0; j < m.data().size(); ++j)
      out.data()[j] = keep * mean_.data()[j] + add * m.data()[j];
  }

  void add(const PredictionMatrix& m) {
    PredictionMatrix next;
    peek(m, next);
    mean_ = std::move(next);
    ++count_;
  }

 private:
  PredictionMatrix mean_;
  std::size_t count_ = 0;
};

// Cache file layout (little-endian):
//   "TTAPRD01" | u32 n_objects | u32 n_classes | u64 FNV-1a of payload | f32 x n*k
inline constexpr std::array<char, 8> kCacheMagic = {'T', 'T', 'A', 'P', 'R', 'D', '0', '1'};
inline constexpr std::size_t kCacheHeaderBytes = 24;

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::vector<unsigned char> encode_f32_payload(const PredictionMatrix& m) {
  std::vector<unsigned char> payload(m.data().size() * 4);
  for (std::size_t j = 0; j < m.data().size(); ++j) {
    const auto f = static_cast<float>(m.data()[j]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) payload[j * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return payload;
}

inline std::string encode_cache(const PredictionMatrix& m) {
  const auto payload = encode_f32_payload(m);
  std::ostringstream os;
  os.write(kCacheMagic.data(), kCacheMagic.size());
  detail::put_u32(os, static_cast<std::uint32_t>(m.n_objects()));
  detail::put_u32(os, static_cast<std::uint32_t>(m.n_classes()));
  detail::put_u64(os, fnv1a64(payload));
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  return os.str();
}

inline PredictionMatrix decode_cache(std::span<const unsigned char> bytes, const std::string& origin) {
  if (bytes.size() < kCacheHeaderBytes)
    throw DataError(origin + ": truncated header: expected " + std::to_string(kCacheHeaderBytes) +
                    " bytes, got " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kCacheMagic.data(), kCacheMagic.size()) != 0)
    throw DataError(origin + ": bad magic (expected TTAPRD01)");
  const std::uint32_t n = detail::get_u32(bytes.data() + 8);
  const std::uint32_t k = detail::get_u32(bytes.data() + 12);
  const std::uint64_t checksum = detail::get_u64(bytes.data() + 16);
  const std::size_t expected = kCacheHeaderBytes + static_cast<std::size_t>(n) * k * 4;
  if (bytes.size() != expected)
    throw DataError(origin + ": truncated payload: expected " + std::to_string(expected) +
                    " bytes, got " + std::to_string(bytes.size()));
  const auto payload = bytes.subspan(kCacheHeaderBytes);
  if (fnv1a64(payload) != checksum) throw DataError(origin + ": checksum mismatch");
  std::vector<double> values(static_cast<std::size_t>(n) * k);
  for (std::size_t j = 0; j < values.size(); ++j) {
    const std::uint32_t bits = detail::get_u32(payload.data() + 4 * j);
    float f;
    std::memcpy(&f, &bits, 4);
    values[j] = f;
  }
  return PredictionMatrix(n, k, std::move(values));
}

/// Writes atomically (temp file + rename) so an interrupted run never leaves a
/// half-written cache behind.
inline void write_cache(const PredictionMatrix& m, const std::filesystem::path& path) {
  const std::string bytes = encode_cache(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline PredictionMatrix read_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_cache(bytes, path.string());
}

inline LabelVector load_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  LabelVector y;
  long long v;
  std::size_t line = 0;
  std::string text;
  while (std::getline(is, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::size_t used = 0;
    try {
      v = std::stoll(text, &used);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": not an integer label");
    }
    if (v < 0) throw DataError(path.string() + ":" + std::to_string(line) + ": negative label");
    y.push_back(static_cast<std::uint32_t>(v));
  }
  return y;
}

inline void save_labels(const std::filesystem::path& path, const LabelVector& y) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (auto v : y) os << v << '\n';
}

}  // namespace tta
