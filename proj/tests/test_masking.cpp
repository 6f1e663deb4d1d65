#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>

#include "patchrank/masking.hpp"
#include "support.hpp"

using namespace patchrank;
using ::testing::HasSubstr;

namespace {

ImageSample ramp(std::size_t channels, std::size_t size) {
  Tensor<float> t({channels, size, size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1f + 0.8f * static_cast<float>(i % 97) / 97.0f;
  return {"ramp", t, Label::kNormal};
}

struct Box {
  std::size_t y0, x0, y1, x1;  // inclusive
};

Box bounding_box(const Tensor<std::uint8_t>& mask) {
  Box b{mask.dim(0), mask.dim(1), 0, 0};
  for (std::size_t y = 0; y < mask.dim(0); ++y)
    for (std::size_t x = 0; x < mask.dim(1); ++x)
      if (mask.at(y, x)) {
        b.y0 = std::min(b.y0, y);
        b.x0 = std::min(b.x0, x);
        b.y1 = std::max(b.y1, y);
        b.x1 = std::max(b.x1, x);
      }
  return b;
}

}  // namespace

TEST(Mask, OccludedPixelsTakeFillValueOthersUntouched) {
  const auto x = ramp(3, 64);
  MaskSpec spec;
  spec.fill_value = 0.25;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto m = apply_mask(x, spec, rng);
    ASSERT_EQ(m.pixels.shape(), x.pixels.shape());
    ASSERT_EQ(m.mask.shape(), (Shape{64, 64}));
    EXPECT_EQ(m.source_id, "ramp");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t xx = 0; xx < 64; ++xx) {
          if (m.mask.at(y, xx)) {
            ASSERT_EQ(m.pixels.at(c, y, xx), 0.25f);
          } else {
            ASSERT_EQ(m.pixels.at(c, y, xx), x.pixels.at(c, y, xx));
          }
        }
  }
}

TEST(Mask, QuarterSideBoxIsExactly256Pixels) {
  MaskSpec spec;
  spec.box_count = {1, 1};
  spec.box_size = {0.25, 0.25};
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto m = apply_mask(ramp(1, 64), spec, rng);
    std::size_t n = 0;
    for (auto v : m.mask.values()) n += v;
    EXPECT_EQ(n, 256u);
    EXPECT_EQ(mask_coverage(m), 0.0625);
    const auto b = bounding_box(m.mask);
    EXPECT_EQ(b.y1 - b.y0 + 1, 16u);
    EXPECT_EQ(b.x1 - b.x0 + 1, 16u);
  }
}

TEST(Mask, SameStateSameMask) {
  MaskSpec spec;
  spec.seed = 77;
  const auto x = ramp(1, 64);
  Rng a(5), b(5);
  const auto ma = apply_mask(x, spec, a);
  const auto mb = apply_mask(x, spec, b);
  EXPECT_EQ(ma.mask, mb.mask);
  EXPECT_EQ(ma.pixels, mb.pixels);
  EXPECT_EQ(apply_mask(x, spec, 3).mask, apply_mask(x, spec, 3).mask);
}

TEST(Mask, StreamsDifferAcrossEpochsAndImages) {
  MaskSpec spec;
  spec.seed = 1;
  auto x = ramp(1, 64);
  int differ_epoch = 0, differ_id = 0;
  for (std::uint64_t e = 0; e < 20; ++e) {
    differ_epoch += !(apply_mask(x, spec, e).mask == apply_mask(x, spec, e + 1).mask);
    auto y = x;
    y.id = "other";
    differ_id += !(apply_mask(x, spec, e).mask == apply_mask(y, spec, e).mask);
  }
  EXPECT_GE(differ_epoch, 18);
  EXPECT_GE(differ_id, 18);
}

TEST(Coverage, EmptyAndFull) {
  MaskedImage none{Tensor<float>({1, 8, 8}), Tensor<std::uint8_t>({8, 8}, 0), "a"};
  EXPECT_EQ(mask_coverage(none), 0.0);
  MaskedImage full{Tensor<float>({1, 8, 8}), Tensor<std::uint8_t>({8, 8}, 1), "a"};
  EXPECT_EQ(mask_coverage(full), 1.0);
}

TEST(Coverage, MultiBoxBounds) {
  MaskSpec spec;  // 1-3 boxes, 8..16 pixel sides on 64x64
  Rng rng(31);
  const double n = 64.0 * 64.0;
  for (int i = 0; i < 500; ++i) {
    const double c = mask_coverage(apply_mask(ramp(1, 64), spec, rng));
    EXPECT_GE(c, 8.0 * 8.0 / n);
    EXPECT_LE(c, 3.0 * 16.0 * 16.0 / n);
  }
}

TEST(Mask, SidePixelRange) {
  MaskSpec spec;
  EXPECT_EQ(spec.side_pixels(64).min, 8);
  EXPECT_EQ(spec.side_pixels(64).max, 16);
  spec.box_size = {0.1, 0.2};
  EXPECT_EQ(spec.side_pixels(64).min, 7);   // ceil(6.4)
  EXPECT_EQ(spec.side_pixels(64).max, 12);  // floor(12.8)
}

TEST(Mask, ValidationNamesTheField) {
  MaskSpec spec;
  spec.box_size = {0.3, 0.2};
  try {
    spec.validate(64, 64);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_THAT(e.what(), HasSubstr("mask.box_size"));
  }
  spec = MaskSpec{};
  spec.box_count = {0, 2};
  EXPECT_THROW(spec.validate(64, 64), ConfigError);
  spec = MaskSpec{};
  spec.fill_value = 2.0;
  EXPECT_THROW(spec.validate(64, 64), ConfigError);
  spec = MaskSpec{};
  spec.box_size = {0.01, 0.02};
  EXPECT_THROW(spec.validate(16, 16), ConfigError);
}
