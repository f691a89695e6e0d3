#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace tta {

/// 8-bit image, row-major, channels interleaved (HWC).
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels, std::uint8_t fill = 0)
      : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}
  ImageBuffer(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<std::uint8_t> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_)
      throw DataError("image payload has " + std::to_string(data_.size()) + " bytes, expected " +
                      std::to_string(height_ * width_ * channels_));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  bool same_shape(const ImageBuffer& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<std::uint8_t> data_;
};

inline constexpr std::array<char, 8> kImageMagic = {'T', 'T', 'A', 'I', 'M', 'G', '0', '1'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* b) {
  return static_cast<std::uint64_t>(get_u32(b)) | (static_cast<std::uint64_t>(get_u32(b + 4)) << 32);
}

}  // namespace detail

/// Writes one TTAIMG01 record: magic, u32 LE height/width/channels, pixel bytes.
inline void write_raw_image(std::ostream& os, const ImageBuffer& img) {
  os.write(kImageMagic.data(), kImageMagic.size());
  detail::put_u32(os, static_cast<std::uint32_t>(img.height()));
  detail::put_u32(os, static_cast<std::uint32_t>(img.width()));
  detail::put_u32(os, static_cast<std::uint32_t>(img.channels()));
  os.write(reinterpret_cast<const char*>(img.data().data()),
           static_cast<std::streamsize>(img.size()));
  if (!os) throw DataError("failed writing image record");
}

/// Reads one TTAIMG01 record. Returns false on clean end-of-stream.
inline bool read_raw_image(std::istream& is, ImageBuffer& out) {
  unsigned char header[20];
  is.read(reinterpret_cast<char*>(header), sizeof header);
  if (is.gcount() == 0 && is.eof()) return false;
  if (is.gcount() != static_cast<std::streamsize>(sizeof header))
    throw DataError("truncated image header");
  if (std::memcmp(header, kImageMagic.data(), kImageMagic.size()) != 0)
    throw DataError("bad image magic (expected TTAIMG01)");
  const std::uint32_t h = detail::get_u32(header + 8);
  const std::uint32_t w = detail::get_u32(header + 12);
  const std::uint32_t c = detail::get_u32(header + 16);
  if (c == 0 || c > 4) throw DataError("unsupported channel count " + std::to_string(c));
  std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w * c);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (is.gcount() != static_cast<std::streamsize>(data.size()))
    throw DataError("truncated image payload: expected " + std::to_string(data.size()) +
                    " bytes, got " + std::to_string(is.gcount()));
  out = ImageBuffer(h, w, c, std::move(data));
  return true;
}

inline void save_raw_image(const std::filesystem::path& path, const ImageBuffer& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_raw_image(os, img);
}

inline ImageBuffer load_raw_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  ImageBuffer img;
  if (!read_raw_image(is, img)) throw DataError(path.string() + " is empty");
  return img;
}

/// A dataset file is a plain concatenation of TTAIMG01 records.
inline void save_image_set(const std::filesystem::path& path, std::span<const ImageBuffer> images) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& img : images) write_raw_image(os, img);
}

inline std::vector<ImageBuffer> load_image_set(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<ImageBuffer> out;
  ImageBuffer img;
  while (read_raw_image(is, img)) out.push_back(std::move(img));
  return out;
}

}  // namespace tta
