#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "patchrank/data.hpp"
#include "patchrank/errors.hpp"
#include "patchrank/random.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

/// Rectangular occlusion policy. Box sides are fractions of the image side.
struct MaskSpec {
  Range<int> box_count{1, 3};
  Range<double> box_size{0.125, 0.25};
  double fill_value = 0.0;
  std::uint64_t seed = 0;

  /// Side range in whole pixels for an image side of `side`.
  Range<int> side_pixels(std::size_t side) const {
    const double s = static_cast<double>(side);
    return {std::max(1, static_cast<int>(std::ceil(box_size.min * s - 1e-9))),
            static_cast<int>(std::floor(box_size.max * s + 1e-9))};
  }

  /// Configuration-time check against an image size.
  void validate(std::size_t height, std::size_t width, const std::string& prefix = "mask") const {
    auto fail = [&](const std::string& field, const std::string& why) {
      throw ConfigError(prefix + "." + field + ": " + why);
    };
    if (box_count.min < 1 || box_count.max < box_count.min) fail("box_count", "need 1 <= min <= max");
    if (!(box_size.min > 0.0) || !(box_size.max < 1.0) || box_size.max < box_size.min) {
      fail("box_size", "fractions must satisfy 0 < min <= max < 1");
    }
    if (!(fill_value >= 0.0 && fill_value <= 1.0)) fail("fill_value", "must lie in [0,1]");
    for (std::size_t side : {height, width}) {
      const auto r = side_pixels(side);
      if (r.max < r.min || r.max > static_cast<int>(side)) {
        fail("box_size", "no whole-pixel box side fits an image side of " + std::to_string(side));
      }
    }
  }
};

/// Masked input z plus the occlusion mask (1 where occluded), spatial (H, W).
struct MaskedImage {
  Tensor<float> pixels;
  Tensor<std::uint8_t> mask;
  std::string source_id;
};

/// Occludes a random number of axis-aligned boxes, placed fully inside the
/// image; boxes may overlap. Deterministic given the generator state.
inline MaskedImage apply_mask(const ImageSample& x, const MaskSpec& spec, Rng& rng) {
  const std::size_t c = x.pixels.dim(0), h = x.pixels.dim(1), w = x.pixels.dim(2);
  MaskedImage out{x.pixels, Tensor<std::uint8_t>({h, w}, 0), x.id};
  const auto rows = spec.side_pixels(h);
  const auto cols = spec.side_pixels(w);
  const int boxes = std::uniform_int_distribution<int>(spec.box_count.min, spec.box_count.max)(rng);
  for (int b = 0; b < boxes; ++b) {
    const int bh = std::uniform_int_distribution<int>(rows.min, rows.max)(rng);
    const int bw = std::uniform_int_distribution<int>(cols.min, cols.max)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, static_cast<int>(h) - bh)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, static_cast<int>(w) - bw)(rng);
    for (int y = y0; y < y0 + bh; ++y)
      for (int xx = x0; xx < x0 + bw; ++xx) out.mask.at(y, xx) = 1;
  }
  const auto fill = static_cast<float>(spec.fill_value);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i)
      if (out.mask[i]) out.pixels[ch * h * w + i] = fill;
  return out;
}

/// Per-image, per-epoch masking stream.
inline MaskedImage apply_mask(const ImageSample& x, const MaskSpec& spec, std::uint64_t epoch) {
  Rng rng(derive_seed(spec.seed, x.id, epoch));
  return apply_mask(x, spec, rng);
}

/// Fraction of occluded pixels.
inline double mask_coverage(const MaskedImage& m) {
  std::size_t n = 0;
  for (auto v : m.mask.values()) n += v ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(m.mask.size());
}

}  // namespace patchrank
