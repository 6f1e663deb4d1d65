#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "patchrank/scoring.hpp"
#include "support.hpp"

using namespace patchrank;
using patchrank::testing::random_tensor;
using patchrank::testing::read_file;
using patchrank::testing::TempDir;
using patchrank::testing::tiny_model;

namespace {

// Multiples of 1/1024 below 1 so that every sum is exact in double.
std::vector<double> dyadic_losses(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> d(0, 1023);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng) / 1024.0;
  return v;
}

}  // namespace

TEST(AbnormalScore, RankedWeightsArithmetic) {
  const RankWeightSchedule ranked;
  EXPECT_NEAR(abnormal_score({0.5, 0.3, 0.1}, ranked).abnormal_score, 0.95, 1e-12);
  EXPECT_NEAR(abnormal_score({0.1, 0.5, 0.3}, ranked).abnormal_score, 0.95, 1e-12);
  EXPECT_NEAR(abnormal_score({0.5, 0.3, 0.1}, RankWeightSchedule::uniform()).abnormal_score, 0.9, 1e-12);
}

TEST(AbnormalScore, ZeroLossesScoreZeroForEverySchedule) {
  RankWeightSchedule geo;
  geo.mode = WeightMode::kGeometric;
  for (const auto& s : {RankWeightSchedule{}, RankWeightSchedule::uniform(), geo}) {
    EXPECT_EQ(abnormal_score({0.0, 0.0, 0.0, 0.0}, s).abnormal_score, 0.0);
  }
  EXPECT_THROW(abnormal_score({}, RankWeightSchedule{}), DataError);
}

TEST(AbnormalScore, RankOrderBreaksTiesByIndex) {
  const auto r = abnormal_score({0.2, 0.2, 0.1, 0.2}, RankWeightSchedule{});
  EXPECT_EQ(r.rank_order, (std::vector<std::size_t>{0, 1, 3, 2}));
  EXPECT_EQ(r.weights, (std::vector<double>{1.1, 1.0, 1.0, 1.0}));
}

TEST(AbnormalScore, TopKAndGeometric) {
  RankWeightSchedule top;
  top.top_k = 2;
  EXPECT_NEAR(abnormal_score({0.1, 0.5, 0.3, 0.2}, top).abnormal_score, 0.5 * 1.1 + 0.3, 1e-15);
  RankWeightSchedule geo;
  geo.mode = WeightMode::kGeometric;
  geo.head = {2.0};
  geo.tail = 1.0;
  geo.decay = 0.5;
  EXPECT_NEAR(abnormal_score({0.4, 0.2, 0.1}, geo).abnormal_score, 0.4 * 2.0 + 0.2 * 1.5 + 0.1 * 1.25, 1e-15);
}

TEST(AbnormalScore, PermutationInvariant) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto v = dyadic_losses(rng, 1 + t % 12);
    const double ranked = abnormal_score(v, RankWeightSchedule{}).abnormal_score;
    const double uniform = abnormal_score(v, RankWeightSchedule::uniform()).abnormal_score;
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(abnormal_score(v, RankWeightSchedule{}).abnormal_score, ranked);
    EXPECT_EQ(abnormal_score(v, RankWeightSchedule::uniform()).abnormal_score, uniform);
  }
}

TEST(AbnormalScore, MonotoneInEveryPatchLoss) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> v(9);
    for (auto& x : v) x = u(rng);
    auto w = v;
    w[t % 9] += u(rng);
    for (const auto& s : {RankWeightSchedule{}, RankWeightSchedule::uniform()}) {
      EXPECT_GE(abnormal_score(w, s).abnormal_score, abnormal_score(v, s).abnormal_score);
    }
  }
}

TEST(AbnormalScore, UniformIsPlainSum) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto v = dyadic_losses(rng, 16);
    EXPECT_EQ(abnormal_score(v, RankWeightSchedule::uniform()).abnormal_score, std::accumulate(v.begin(), v.end(), 0.0));
  }
}

TEST(AbnormalScore, RankedMinusUniformIsTheHeadBonus) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto v = dyadic_losses(rng, 4);
    auto sorted = v;
    std::sort(sorted.rbegin(), sorted.rend());
    const double diff = abnormal_score(v, RankWeightSchedule{}).abnormal_score -
                        abnormal_score(v, RankWeightSchedule::uniform()).abnormal_score;
    EXPECT_NEAR(diff, 0.1 * sorted[0], 1e-12);
  }
  RankWeightSchedule flat;
  flat.head = {1.0, 1.0};
  const std::vector<double> v{0.3, 0.9, 0.1};
  EXPECT_EQ(abnormal_score(v, flat).abnormal_score, abnormal_score(v, RankWeightSchedule::uniform()).abnormal_score);
}

TEST(Patches, CountsAndBitwiseRoundTrip) {
  std::mt19937_64 rng(5);
  const PatchGrid grid;
  for (std::size_t size : {32u, 64u, 96u, 128u}) {
    const auto img = random_tensor<float>({3, size, size}, rng, 0.0, 1.0);
    const auto patches = extract_patches(img, grid);
    EXPECT_EQ(patches.size(), (size / 32) * (size / 32));
    EXPECT_EQ(patches[0].shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(reassemble_patches(patches, grid, img.shape()), img);
  }
}

TEST(Patches, OverlappingStrideRoundTrip) {
  std::mt19937_64 rng(6);
  const PatchGrid grid{32, 16};
  const auto img = random_tensor<double>({1, 64, 64}, rng);
  const auto patches = extract_patches(img, grid);
  EXPECT_EQ(patches.size(), 9u);
  EXPECT_EQ(reassemble_patches(patches, grid, img.shape()), img);
  EXPECT_THROW(PatchGrid({32, 48}).validate(64, 64), ConfigError);
  EXPECT_THROW(PatchGrid{}.validate(48, 48), ConfigError);
}

TEST(PatchLosses, IdentityAndLocality) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({1, 64, 64}, rng, 0.0, 1.0);
  for (double v : patch_losses(x, x, PatchGrid{})) EXPECT_EQ(v, 0.0);
  auto rz = x;
  for (std::size_t y = 4; y < 12; ++y)
    for (std::size_t c = 40; c < 50; ++c) rz.at(0, y, c) = 1.0 - rz.at(0, y, c);
  const auto l = patch_losses(x, rz, PatchGrid{});
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], 0.0);
  EXPECT_GT(l[1], 0.0);
  EXPECT_EQ(l[2], 0.0);
  EXPECT_EQ(l[3], 0.0);
}

TEST(PatchLosses, MeanEqualsWholeImageMse) {
  std::mt19937_64 rng(8);
  for (std::size_t size : {32u, 64u, 96u}) {
    const auto x = random_tensor<double>({2, size, size}, rng, 0.0, 1.0);
    const auto rz = random_tensor<double>({2, size, size}, rng, 0.0, 1.0);
    const auto l = patch_losses(x, rz, PatchGrid{});
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - rz[i]) * (x[i] - rz[i]);
    mse /= static_cast<double>(x.size());
    const double mean = std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
    EXPECT_NEAR(mean, mse, 1e-6 * mse);
  }
}

class ScoreDatasetTest : public ::testing::Test {
 protected:
  ScoreDatasetTest() : models(tiny_model(), 2) {
    SynthSpec s;
    s.image_size = 32;
    s.train_count = 0;
    s.test_normal_count = 4;
    s.test_abnormal_count = 4;
    s.blob_radius = {2.0, 5.0};
    test = generate_synthetic(s).test;
  }
  Models<float> models;
  Dataset test;
  PatchGrid grid{16, 16};
};

TEST_F(ScoreDatasetTest, DuplicatesScoreIdentically) {
  std::vector<ImageSample> dup{test[0], test[0], test[5]};
  dup[1].id = "copy";
  const auto r = score_dataset(models, Dataset(Split::kTest, dup), grid, RankWeightSchedule{});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].patch_losses, r[1].patch_losses);
  EXPECT_EQ(r[0].abnormal_score, r[1].abnormal_score);
  EXPECT_EQ(r[1].id, "copy");
  EXPECT_EQ(r[2].label, Label::kAbnormal);
}

TEST_F(ScoreDatasetTest, DeterministicCsvAndBatchingInvariance) {
  TempDir dir;
  const auto a = score_dataset(models, test, grid, RankWeightSchedule{});
  const auto b = score_dataset(models, test, grid, RankWeightSchedule{}, {}, 3);
  write_score_csv(dir.path() / "a.csv", a);
  write_score_csv(dir.path() / "b.csv", b);
  EXPECT_EQ(read_file(dir.path() / "a.csv"), read_file(dir.path() / "b.csv"));
  const auto back = read_score_csv(dir.path() / "a.csv");
  ASSERT_EQ(back.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(back[i].id, a[i].id);
    EXPECT_EQ(back[i].label, a[i].label);
    EXPECT_EQ(back[i].abnormal_score, a[i].abnormal_score);
    EXPECT_EQ(back[i].patch_losses, a[i].patch_losses);
    EXPECT_EQ(back[i].rank_order, a[i].rank_order);
  }
}

TEST_F(ScoreDatasetTest, RescoreMatchesDirectScoring) {
  const auto ranked = score_dataset(models, test, grid, RankWeightSchedule{});
  const auto uniform = score_dataset(models, test, grid, RankWeightSchedule::uniform());
  const auto re = rescore(ranked, RankWeightSchedule::uniform());
  for (std::size_t i = 0; i < re.size(); ++i) EXPECT_EQ(re[i].abnormal_score, uniform[i].abnormal_score);
}

TEST_F(ScoreDatasetTest, MultiMaskIsSeededAndDiffersFromPlain) {
  InferencePolicy multi;
  multi.mode = InferenceMask::kMulti;
  multi.samples = 3;
  multi.seed = 11;
  const auto a = score_dataset(models, test, grid, RankWeightSchedule{}, multi);
  const auto b = score_dataset(models, test, grid, RankWeightSchedule{}, multi);
  const auto plain = score_dataset(models, test, grid, RankWeightSchedule{});
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].patch_losses, b[i].patch_losses);
    any_diff = any_diff || a[i].patch_losses != plain[i].patch_losses;
  }
  EXPECT_TRUE(any_diff);
}

TEST_F(ScoreDatasetTest, RejectsMismatchedImages) {
  const Dataset big = patchrank::testing::constant_dataset(2, 64, 0.5f, Split::kTest);
  EXPECT_THROW(score_dataset(models, big, grid, RankWeightSchedule{}), ShapeError);
}

TEST(Heatmap, SingleHotCellAndArgmax) {
  const auto r = abnormal_score({0.0, 0.0, 0.7, 0.0}, RankWeightSchedule{});
  const auto img = render_heatmap(r, 2, 2, 4);
  ASSERT_EQ(img.width, 8);
  ASSERT_EQ(img.height, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const bool hot = y >= 4 && x < 4;
      EXPECT_EQ(img.pixels[static_cast<std::size_t>(y * 8 + x)], hot ? 255 : 0);
    }
  EXPECT_EQ(r.rank_order[0], 2u);
}

TEST(Heatmap, EqualLossesRenderUniformGray) {
  const auto img = render_heatmap(abnormal_score({0.0, 0.0, 0.0, 0.0}, RankWeightSchedule{}), 2, 2, 3);
  for (auto p : img.pixels) EXPECT_EQ(p, img.pixels[0]);
  EXPECT_GT(img.pixels[0], 100);
  EXPECT_LT(img.pixels[0], 156);
}

TEST(Heatmap, BrightestCellIsFirstRanked) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(9);
    for (auto& x : v) x = u(rng);
    const auto r = abnormal_score(v, RankWeightSchedule{});
    const auto img = render_heatmap(r, 3, 3, 1);
    const auto argmax = static_cast<std::size_t>(std::max_element(img.pixels.begin(), img.pixels.end()) - img.pixels.begin());
    EXPECT_EQ(argmax, r.rank_order[0]);
  }
}

TEST(Heatmap, FixedScaleUsesAbsoluteRange) {
  const auto r = abnormal_score({0.01, 0.02, 0.03, 0.04}, RankWeightSchedule{});
  const auto img = render_heatmap(r, 2, 2, 1, HeatmapScale::kFixed, 0.08);
  EXPECT_EQ(img.pixels[3], to_byte(0.5));
  TempDir dir;
  emit_heatmap(r, 2, 2, 4, dir.path() / "sub" / "h.png");
  const auto back = read_png(dir.path() / "sub" / "h.png");
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->width, 8);
}
