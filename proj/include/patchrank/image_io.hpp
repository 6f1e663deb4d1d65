#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

/// 8-bit interleaved image as stored on disk.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes a PNG as 8-bit gray or RGB (alpha and palettes are flattened by
/// libpng). Returns nullopt when the file is not a decodable PNG.
inline std::optional<RawImage> read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) return std::nullopt;
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    return std::nullopt;
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: channels must be 1 or 3");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// (C, H, W) tensor with values in [0, 1] to an 8-bit image.
inline RawImage tensor_to_image(const Tensor<float>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeError("tensor_to_image expects (1|3, H, W), got " + shape_string(t.shape()));
  }
  RawImage img{static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)), {}};
  const std::size_t plane = t.dim(1) * t.dim(2);
  img.pixels.resize(plane * t.dim(0));
  for (std::size_t c = 0; c < t.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) img.pixels[i * t.dim(0) + c] = to_byte(t[c * plane + i]);
  return img;
}

/// Bilinear resize with half-pixel centres and edge clamping, one plane.
inline std::vector<float> resize_bilinear(const std::vector<float>& src, int sw, int sh, int dw, int dh) {
  std::vector<float> dst(static_cast<std::size_t>(dw) * dh);
  if (sw == dw && sh == dh) return src;
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      const double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      dst[static_cast<std::size_t>(y) * dw + x] = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return dst;
}

/// Converts a decoded image to a (channels, size, size) tensor in [0, 1].
/// RGB input is reduced to luminance when one channel is requested; gray input
/// is replicated when three are requested.
inline Tensor<float> image_to_tensor(const RawImage& img, int channels, int size) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::vector<float>> planes;
  auto px = [&](std::size_t i, int c) { return img.pixels[i * img.channels + c] / 255.0f; };
  if (channels == 1) {
    std::vector<float> lum(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      lum[i] = img.channels == 1 ? px(i, 0)
                                 : 0.299f * px(i, 0) + 0.587f * px(i, 1) + 0.114f * px(i, 2);
    }
    planes.push_back(std::move(lum));
  } else {
    for (int c = 0; c < 3; ++c) {
      std::vector<float> p(plane);
      for (std::size_t i = 0; i < plane; ++i) p[i] = px(i, img.channels == 1 ? 0 : c);
      planes.push_back(std::move(p));
    }
  }
  AlignedVector<float> data;
  data.reserve(static_cast<std::size_t>(channels) * size * size);
  for (auto& p : planes) {
    auto r = resize_bilinear(p, img.width, img.height, size, size);
    for (float& v : r) v = std::clamp(v, 0.0f, 1.0f);
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor<float>({static_cast<std::size_t>(channels), static_cast<std::size_t>(size),
                        static_cast<std::size_t>(size)},
                       std::move(data));
}

}  // namespace patchrank
