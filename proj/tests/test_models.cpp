#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>

#include "patchrank/models.hpp"
#include "support.hpp"

using namespace patchrank;
using patchrank::testing::random_tensor;
using ::testing::HasSubstr;

namespace {

ModelConfig sized(int image) {
  ModelConfig m;
  m.image_size = image;
  return m;
}

}  // namespace

TEST(Reconstructor, OutputShapeMatchesInput) {
  for (int size : {64, 96}) {
    Reconstructor<float> r(sized(size), 1);
    const Shape s{1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)};
    EXPECT_EQ(r.network().output_shape(), s);
    MaskedImage z{Tensor<float>(s, 0.3f), Tensor<std::uint8_t>({s[1], s[2]}), "z"};
    EXPECT_EQ(r.reconstruct(z).shape(), s);
  }
}

TEST(Reconstructor, OutputInUnitRangeForRandomParameters) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 4; ++trial) {
    ModelConfig cfg = sized(32);
    cfg.encoder_channels = {4, 8, 8};
    cfg.patch_size = 16;
    Reconstructor<float> r(cfg, rng());
    r.network().init_gaussian(0.5 + trial, rng());
    const auto y = r.reconstruct(random_tensor<float>({3, 1, 32, 32}, rng, -2.0, 3.0));
    for (float v : y.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f) << v;
  }
}

TEST(Reconstructor, DefaultArchitecture) {
  const auto layers = reconstructor_layers(ModelConfig{});
  ASSERT_EQ(layers.size(), 16u);
  for (std::size_t i = 0; i < 8; i += 2) {
    EXPECT_EQ(layers[i].kind, LayerKind::kConv2d);
    EXPECT_EQ(layers[i].stride, 2);
    EXPECT_EQ(layers[i + 1].kind, LayerKind::kLeakyRelu);
  }
  for (std::size_t i = 8; i < 16; i += 2) {
    EXPECT_EQ(layers[i].kind, LayerKind::kDeconv2d);
    EXPECT_EQ(layers[i].stride, 2);
  }
  EXPECT_EQ(layers[13].kind, LayerKind::kRelu);
  EXPECT_EQ(layers[15].kind, LayerKind::kUnitTanh);
}

TEST(Discriminator, GridSizeFollowsImageSize) {
  PatchDiscriminator<float> d64(sized(64), 1);
  EXPECT_EQ(d64.grid_rows(), 2u);
  EXPECT_EQ(d64.grid_cols(), 2u);
  PatchDiscriminator<float> d96(sized(96), 1);
  EXPECT_EQ(d96.grid_rows(), 3u);
  EXPECT_EQ(discriminator_strides(32, 3), (std::vector<int>{4, 4, 2}));
}

TEST(Discriminator, ScoresStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(8);
  PatchDiscriminator<double> d(sized(64), 2);
  d.network().init_gaussian(0.3, 5);
  const auto s = d.discriminate(random_tensor<double>({4, 1, 64, 64}, rng, 0.0, 1.0));
  EXPECT_EQ(s.shape(), (Shape{4, 1, 2, 2}));
  for (double v : s.values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
}

TEST(Discriminator, ReceptiveFieldsTileTheImage) {
  PatchDiscriminator<float> d(sized(96), 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto rf = d.receptive_field(r, c);
      EXPECT_EQ(rf.y0, static_cast<int>(32 * r));
      EXPECT_EQ(rf.x0, static_cast<int>(32 * c));
      EXPECT_EQ(rf.y1 - rf.y0, 32);
      EXPECT_EQ(rf.x1 - rf.x0, 32);
    }
}

TEST(Discriminator, PixelBombsOnlyMoveContainingCells) {
  std::mt19937_64 rng(13);
  PatchDiscriminator<double> d(sized(64), 4);
  d.network().init_gaussian(0.2, 6);
  const auto base = random_tensor<double>({1, 1, 64, 64}, rng, 0.0, 1.0);
  const auto s0 = d.discriminate(base);
  std::uniform_int_distribution<int> pos(0, 63);
  for (int probe = 0; probe < 50; ++probe) {
    const int y = pos(rng), x = pos(rng);
    auto bombed = base;
    bombed.at(0, 0, y, x) += 10.0;
    const auto s1 = d.discriminate(bombed);
    for (std::size_t r = 0; r < d.grid_rows(); ++r)
      for (std::size_t c = 0; c < d.grid_cols(); ++c) {
        const bool inside = d.receptive_field(r, c).contains(y, x);
        if (!inside) EXPECT_EQ(s1.at(0, 0, r, c), s0.at(0, 0, r, c)) << y << "," << x;
        if (inside) EXPECT_NE(s1.at(0, 0, r, c), s0.at(0, 0, r, c)) << y << "," << x;
      }
  }
}

TEST(Discriminator, InputsDifferingOutsideCellKeepItsScore) {
  std::mt19937_64 rng(21);
  PatchDiscriminator<float> d(sized(64), 9);
  auto a = random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
  auto b = a;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      if (y >= 32 || x >= 32) b.at(0, 0, y, x) = 1.0f - b.at(0, 0, y, x);
  EXPECT_EQ(d.discriminate(a).at(0, 0, 0, 0), d.discriminate(b).at(0, 0, 0, 0));
}

TEST(ModelConfig, ValidationNamesTheField) {
  ModelConfig m;
  m.patch_size = 24;
  try {
    m.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_THAT(e.what(), HasSubstr("model.patch_size"));
  }
  m = ModelConfig{};
  m.image_size = 72;
  EXPECT_THROW(m.validate(), ConfigError);
  m = ModelConfig{};
  m.encoder_channels.clear();
  EXPECT_THROW(m.validate(), ConfigError);
  EXPECT_THROW(parse_init_scheme("xavier"), ConfigError);
}

TEST(ModelConfig, InitSchemes) {
  ModelConfig m;
  Reconstructor<double> fixed(m, 1);
  double sq = 0.0;
  const auto& w = fixed.network().params()[0];
  for (double v : w.values()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(w.size())), 0.02, 0.004);
  for (double v : fixed.network().params()[1].values()) EXPECT_EQ(v, 0.0);
  m.init = InitScheme::kFanIn;
  Reconstructor<double> fan(m, 1);
  EXPECT_NE(fan.network().fingerprint(), fixed.network().fingerprint());
}
