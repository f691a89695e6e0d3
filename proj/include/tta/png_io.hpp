#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "image.hpp"

namespace tta {

inline ImageBuffer load_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, data.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  return ImageBuffer(png.height, png.width, 3, std::move(data));
}

inline void save_png(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels() != 3 && img.channels() != 1)
    throw DataError("PNG output supports 1 or 3 channels");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.data().data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
}

/// Dispatches on extension: ".png" uses PNG, anything else the TTAIMG01 format.
inline ImageBuffer load_image(const std::filesystem::path& path) {
  return path.extension() == ".png" ? load_png(path) : load_raw_image(path);
}

inline void save_image(const std::filesystem::path& path, const ImageBuffer& img) {
  if (path.extension() == ".png")
    save_png(path, img);
  else
    save_raw_image(path, img);
}

}  // namespace tta
