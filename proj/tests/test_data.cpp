#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "patchrank/data.hpp"
#include "support.hpp"

using namespace patchrank;
using patchrank::testing::TempDir;
using ::testing::HasSubstr;

namespace {

SynthSpec small_spec(std::uint64_t seed = 3) {
  SynthSpec s;
  s.train_count = 6;
  s.test_normal_count = 10;
  s.test_abnormal_count = 10;
  s.seed = seed;
  return s;
}

void write_gray(const std::filesystem::path& p, int size, std::uint8_t value) {
  RawImage img{size, size, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size), value)};
  write_png(p, img);
}

}  // namespace

TEST(Synthetic, CountsAndLabels) {
  const auto c = generate_synthetic(small_spec());
  EXPECT_EQ(c.train.size(), 6u);
  EXPECT_EQ(c.train.count(Label::kNormal), 6u);
  ASSERT_EQ(c.test.size(), 20u);
  EXPECT_EQ(c.test.count(Label::kAbnormal), 10u);
  EXPECT_EQ(c.test.count(Label::kNormal), 10u);
  EXPECT_EQ(c.test.image_shape(), (Shape{1, 64, 64}));
  EXPECT_EQ(c.test_clean.size(), 20u);
  EXPECT_EQ(c.test_blobs.size(), 20u);
}

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
  const auto a = generate_synthetic(small_spec(5));
  const auto b = generate_synthetic(small_spec(5));
  const auto c = generate_synthetic(small_spec(6));
  EXPECT_EQ(dataset_hash(a.train), dataset_hash(b.train));
  EXPECT_EQ(dataset_hash(a.test), dataset_hash(b.test));
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test[i].pixels, b.test[i].pixels);
  EXPECT_NE(dataset_hash(a.test), dataset_hash(c.test));
}

TEST(Synthetic, InjectionStaysInsideBlobBoxes) {
  const auto c = generate_synthetic(small_spec(8));
  for (std::size_t i = 0; i < c.test.size(); ++i) {
    const auto& img = c.test[i].pixels;
    const auto& clean = c.test_clean[i];
    const auto& blobs = c.test_blobs[i];
    if (c.test[i].label == Label::kNormal) {
      EXPECT_TRUE(blobs.empty());
      EXPECT_EQ(img, clean);
      continue;
    }
    ASSERT_FALSE(blobs.empty());
    std::size_t changed = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (img.at(0, y, x) == clean.at(0, y, x)) continue;
        ++changed;
        bool inside = false;
        for (const auto& b : blobs) {
          inside = inside || (static_cast<int>(x) >= b.x0 && static_cast<int>(x) <= b.x1 &&
                              static_cast<int>(y) >= b.y0 && static_cast<int>(y) <= b.y1);
        }
        EXPECT_TRUE(inside) << c.test[i].id << " pixel " << y << "," << x;
      }
    EXPECT_GT(changed, 0u);
  }
}

TEST(Synthetic, AnomalousFractionWithinBlobBounds) {
  SynthSpec s = small_spec(12);
  s.test_normal_count = 1;
  s.test_abnormal_count = 60;
  const auto c = generate_synthetic(s);
  const double n = 64.0 * 64.0;
  const double r_min = s.blob_radius.min, r_max = s.blob_radius.max;
  // Pixel-discretized ellipse area deviates from pi*r^2 by at most the
  // perimeter band; 0.5 and 1.5 factors leave room for that at r >= 4.
  const double lo = 0.5 * std::numbers::pi * r_min * r_min / n;
  const double hi = 1.5 * s.blob_count.max * std::numbers::pi * r_max * r_max / n;
  for (std::size_t i = 0; i < c.test.size(); ++i) {
    if (c.test[i].label != Label::kAbnormal) continue;
    std::size_t changed = 0;
    for (std::size_t k = 0; k < c.test[i].pixels.size(); ++k) changed += c.test[i].pixels[k] != c.test_clean[i][k];
    const double frac = static_cast<double>(changed) / n;
    EXPECT_GE(frac, lo) << c.test[i].id;
    EXPECT_LE(frac, hi) << c.test[i].id;
    for (const auto& b : c.test_blobs[i]) EXPECT_GE(std::abs(b.delta), s.blob_delta.min - 1e-12);
  }
}

TEST(Synthetic, SamplesSatisfyInvariantsForRandomSpecs) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 12; ++trial) {
    SynthSpec s;
    s.train_count = 3;
    s.test_normal_count = 2;
    s.test_abnormal_count = 3;
    s.image_size = std::uniform_int_distribution<int>(0, 1)(rng) ? 32 : 64;
    s.channels = std::uniform_int_distribution<int>(0, 1)(rng) ? 1 : 3;
    s.blob_radius = {2.0, std::uniform_real_distribution<double>(3.0, s.image_size / 4.0)(rng)};
    s.blob_delta = {0.3, std::uniform_real_distribution<double>(0.3, 0.9)(rng)};
    s.seed = rng();
    const auto c = generate_synthetic(s);
    for (const auto* ds : {&c.train, &c.test}) {
      for (const auto& smp : ds->samples()) {
        ASSERT_EQ(smp.pixels.shape(), (Shape{static_cast<std::size_t>(s.channels), static_cast<std::size_t>(s.image_size),
                                             static_cast<std::size_t>(s.image_size)}));
        for (float v : smp.pixels.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        EXPECT_FALSE(smp.id.empty());
      }
    }
    EXPECT_EQ(c.train.count(Label::kNormal), c.train.size());
  }
}

TEST(Synthetic, ValidationNamesTheField) {
  SynthSpec s;
  s.blob_radius = {0.0, 3.0};
  try {
    s.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_THAT(e.what(), HasSubstr("synth.blob_radius"));
  }
  s = SynthSpec{};
  s.test_abnormal_count = -1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SynthSpec{};
  s.channels = 2;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(DatasetContract, RejectsAbnormalTrainSamples) {
  std::vector<ImageSample> samples{{"a", Tensor<float>({1, 4, 4}, 0.5f), Label::kNormal},
                                   {"b", Tensor<float>({1, 4, 4}, 0.5f), Label::kAbnormal}};
  EXPECT_THROW(Dataset(Split::kTrain, samples), DataError);
  EXPECT_NO_THROW(Dataset(Split::kTest, samples));
}

TEST(DatasetContract, RejectsMixedShapesAndOutOfRangePixels) {
  EXPECT_THROW(Dataset(Split::kTest, {{"a", Tensor<float>({1, 4, 4}), Label::kNormal},
                                      {"b", Tensor<float>({1, 8, 8}), Label::kNormal}}),
               ShapeError);
  EXPECT_THROW(Dataset(Split::kTest, {{"a", Tensor<float>({1, 4, 4}, 1.5f), Label::kNormal}}), DataError);
  const auto ds = patchrank::testing::constant_dataset(2, 48, 0.5f);
  EXPECT_THROW(ds.require_patch_multiple(32), ConfigError);
  EXPECT_NO_THROW(ds.require_patch_multiple(16));
}

TEST(Ingest, CountsLabelsAndSkipsUnmappedOrBrokenFiles) {
  TempDir dir;
  for (int i = 0; i < 3; ++i) write_gray(dir.path() / "normal" / ("n" + std::to_string(i) + ".png"), 64, 100);
  for (int i = 0; i < 2; ++i) write_gray(dir.path() / "abnormal" / ("a" + std::to_string(i) + ".png"), 64, 200);
  write_gray(dir.path() / "other" / "x.png", 64, 10);
  std::ofstream(dir.path() / "normal" / "broken.png") << "not png";
  const auto r = ingest_folder(dir.path(), Split::kTest, IngestOptions{});
  EXPECT_EQ(r.dataset.size(), 5u);
  EXPECT_EQ(r.dataset.count(Label::kNormal), 3u);
  EXPECT_EQ(r.dataset.count(Label::kAbnormal), 2u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.warnings.size(), 2u);
  std::vector<std::string> ids;
  for (const auto& s : r.dataset.samples()) ids.push_back(s.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"abnormal/a0", "abnormal/a1", "normal/n0", "normal/n1", "normal/n2"}));
}

TEST(Ingest, ScalesAndResizes) {
  TempDir dir;
  write_gray(dir.path() / "normal" / "white.png", 64, 255);
  write_gray(dir.path() / "normal" / "big.png", 128, 0);
  IngestOptions opts;
  opts.target_size = 64;
  const auto r = ingest_folder(dir.path(), Split::kTrain, opts);
  ASSERT_EQ(r.dataset.size(), 2u);
  EXPECT_EQ(r.dataset.image_shape(), (Shape{1, 64, 64}));
  const auto& white = r.dataset[1];
  ASSERT_EQ(white.id, "normal/white");
  for (float v : white.pixels.values()) EXPECT_EQ(v, 1.0f);
}

TEST(Ingest, RgbToLuminanceAndThreeChannelMode) {
  TempDir dir;
  RawImage rgb{2, 2, 3, {}};
  for (int i = 0; i < 4; ++i) rgb.pixels.insert(rgb.pixels.end(), {255, 0, 0});
  write_png(dir.path() / "normal" / "red.png", rgb);
  IngestOptions opts;
  opts.target_size = 2;
  const auto gray = ingest_folder(dir.path(), Split::kTest, opts);
  EXPECT_NEAR(gray.dataset[0].pixels[0], 0.299, 1e-6);
  opts.channels = 3;
  const auto color = ingest_folder(dir.path(), Split::kTest, opts);
  EXPECT_EQ(color.dataset.image_shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(color.dataset[0].pixels.at(0, 0, 0), 1.0f);
  EXPECT_EQ(color.dataset[0].pixels.at(1, 0, 0), 0.0f);
}

TEST(Ingest, MissingFolderIsAnError) {
  EXPECT_THROW(ingest_folder("/nonexistent/patchrank", Split::kTest, IngestOptions{}), DataError);
}

TEST(Ingest, PngRoundTripOfSyntheticData) {
  TempDir dir;
  const auto c = generate_synthetic(small_spec());
  write_dataset_pngs(c.test, dir.path());
  const auto r = ingest_folder(dir.path(), Split::kTest, IngestOptions{});
  ASSERT_EQ(r.dataset.size(), c.test.size());
  EXPECT_EQ(r.dataset.count(Label::kAbnormal), 10u);
  // 8-bit quantization bounds the difference.
  for (const auto& s : r.dataset.samples()) {
    const auto slash = s.id.find('/');
    const std::string id = s.id.substr(slash + 1);
    const auto it = std::find_if(c.test.samples().begin(), c.test.samples().end(),
                                 [&](const auto& o) { return o.id == id; });
    ASSERT_NE(it, c.test.samples().end());
    for (std::size_t k = 0; k < s.pixels.size(); ++k) EXPECT_NEAR(s.pixels[k], it->pixels[k], 0.5 / 255 + 1e-6);
  }
}

TEST(Batching, SizesAndCoverage) {
  const auto ds = patchrank::testing::constant_dataset(10, 4, 0.5f);
  const auto b = split_batches(ds, 4, 1);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].indices.size(), 4u);
  EXPECT_EQ(b[1].indices.size(), 4u);
  EXPECT_EQ(b[2].indices.size(), 2u);
  EXPECT_EQ(b[2].pixels.shape(), (Shape{2, 1, 4, 4}));
  std::multiset<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.indices.begin(), batch.indices.end());
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(split_batches(ds, 1, 1).size(), 10u);
}

TEST(Batching, SeedDeterminesOrder) {
  const auto ds = patchrank::testing::constant_dataset(20, 4, 0.5f);
  auto order = [&](std::uint64_t seed) {
    std::vector<std::size_t> o;
    for (const auto& b : split_batches(ds, 3, seed)) o.insert(o.end(), b.indices.begin(), b.indices.end());
    return o;
  };
  EXPECT_EQ(order(4), order(4));
  EXPECT_NE(order(4), order(5));
}

TEST(Manifest, WritesRows) {
  TempDir dir;
  write_manifest(dir.path() / "m.csv", {{"a", Label::kNormal, "x/a.png"}, {"b", Label::kAbnormal, "x/b.png"}});
  EXPECT_EQ(patchrank::testing::read_file(dir.path() / "m.csv"), "id,label,path\na,normal,x/a.png\nb,abnormal,x/b.png\n");
}
