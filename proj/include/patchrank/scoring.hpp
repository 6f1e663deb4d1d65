#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "patchrank/data.hpp"
#include "patchrank/errors.hpp"
#include "patchrank/image_io.hpp"
#include "patchrank/masking.hpp"
#include "patchrank/parallel.hpp"
#include "patchrank/training.hpp"

namespace patchrank {

struct PatchOrigin {
  std::size_t row = 0;  // grid coordinates
  std::size_t col = 0;
  std::size_t y = 0;  // pixel origin
  std::size_t x = 0;
};

/// Tiling of an image into square patches.
struct PatchGrid {
  int patch_size = 32;
  int stride = 32;

  void validate(std::size_t height, std::size_t width) const {
    if (patch_size < 1 || stride < 1) throw ConfigError("patch grid: patch_size and stride must be >= 1");
    if (stride > patch_size) throw ConfigError("patch grid: stride larger than patch_size leaves gaps");
    const auto p = static_cast<std::size_t>(patch_size), s = static_cast<std::size_t>(stride);
    if (height < p || width < p || (height - p) % s != 0 || (width - p) % s != 0) {
      throw ConfigError("patch grid " + std::to_string(patch_size) + "/" + std::to_string(stride) +
                        " does not tile a " + std::to_string(height) + "x" + std::to_string(width) + " image");
    }
  }

  std::size_t rows(std::size_t height) const { return (height - patch_size) / stride + 1; }
  std::size_t cols(std::size_t width) const { return (width - patch_size) / stride + 1; }

  /// Row-major patch origins.
  std::vector<PatchOrigin> origins(std::size_t height, std::size_t width) const {
    validate(height, width);
    std::vector<PatchOrigin> out;
    for (std::size_t r = 0; r < rows(height); ++r)
      for (std::size_t c = 0; c < cols(width); ++c)
        out.push_back({r, c, r * static_cast<std::size_t>(stride), c * static_cast<std::size_t>(stride)});
    return out;
  }
};

/// Patches (C, p, p) of a (C, H, W) image in row-major grid order.
template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, const PatchGrid& grid) {
  if (image.rank() != 3) throw ShapeError("extract_patches expects (C, H, W), got " + shape_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto p = static_cast<std::size_t>(grid.patch_size);
  std::vector<Tensor<T>> out;
  for (const auto& o : grid.origins(h, w)) {
    Tensor<T> patch({c, p, p});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < p; ++y)
        std::copy_n(image.data() + (ch * h + o.y + y) * w + o.x, p, patch.data() + (ch * p + y) * p);
    out.push_back(std::move(patch));
  }
  return out;
}

/// Inverse of extract_patches for a known image shape (C, H, W).
template <typename T>
Tensor<T> reassemble_patches(const std::vector<Tensor<T>>& patches, const PatchGrid& grid, const Shape& image_shape) {
  const std::size_t c = image_shape.at(0), h = image_shape.at(1), w = image_shape.at(2);
  const auto origins = grid.origins(h, w);
  if (patches.size() != origins.size()) {
    throw ShapeError("reassemble: got " + std::to_string(patches.size()) + " patches, grid has " +
                     std::to_string(origins.size()));
  }
  const auto p = static_cast<std::size_t>(grid.patch_size);
  Tensor<T> image(image_shape);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& o = origins[i];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < p; ++y)
        std::copy_n(patches[i].data() + (ch * p + y) * p, p, image.data() + (ch * h + o.y + y) * w + o.x);
  }
  return image;
}

/// Mean squared error per patch, ordered like extract_patches.
template <typename T>
std::vector<double> patch_losses(const Tensor<T>& x, const Tensor<T>& rz, const PatchGrid& grid) {
  require_same_shape(x, rz, "patch_losses");
  if (x.rank() != 3) throw ShapeError("patch_losses expects (C, H, W), got " + shape_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto p = static_cast<std::size_t>(grid.patch_size);
  std::vector<double> out;
  for (const auto& o : grid.origins(h, w)) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < p; ++y) {
        const std::size_t base = (ch * h + o.y + y) * w + o.x;
        for (std::size_t xx = 0; xx < p; ++xx) {
          const double d = static_cast<double>(x[base + xx]) - static_cast<double>(rz[base + xx]);
          acc += d * d;
        }
      }
    out.push_back(acc / static_cast<double>(c * p * p));
  }
  return out;
}

enum class WeightMode {
  kRanked,     // head weights by descending-loss rank, then tail
  kUniform,    // every weight equal to 1 (plain sum)
  kGeometric,  // tail + (head[0] - tail) * decay^rank
};

inline std::string_view to_string(WeightMode m) {
  switch (m) {
    case WeightMode::kRanked: return "ranked";
    case WeightMode::kUniform: return "uniform";
    case WeightMode::kGeometric: return "geometric";
  }
  return "ranked";
}

inline WeightMode parse_weight_mode(std::string_view s) {
  if (s == "ranked") return WeightMode::kRanked;
  if (s == "uniform") return WeightMode::kUniform;
  if (s == "geometric") return WeightMode::kGeometric;
  throw ConfigError("unknown weight mode '" + std::string(s) + "'");
}

/// Weights applied to patch losses by rank (rank 0 = largest loss).
struct RankWeightSchedule {
  std::vector<double> head{1.1, 1.0};
  double tail = 1.0;
  WeightMode mode = WeightMode::kRanked;
  double decay = 0.5;      // geometric mode only
  std::size_t top_k = 0;   // 0 = all patches contribute

  void validate(const std::string& prefix = "scoring") const {
    for (double w : head)
      if (!(w > 0)) throw ConfigError(prefix + ".weights: all weights must be > 0");
    if (!(tail > 0)) throw ConfigError(prefix + ".tail_weight: must be > 0");
    if (mode == WeightMode::kGeometric && (head.empty() || !(decay > 0 && decay < 1))) {
      throw ConfigError(prefix + ".decay: geometric mode needs a head weight and 0 < decay < 1");
    }
  }

  double weight(std::size_t rank) const {
    switch (mode) {
      case WeightMode::kUniform: return 1.0;
      case WeightMode::kGeometric: return tail + (head.at(0) - tail) * std::pow(decay, static_cast<double>(rank));
      case WeightMode::kRanked: break;
    }
    return rank < head.size() ? head[rank] : tail;
  }

  static RankWeightSchedule uniform() {
    RankWeightSchedule s;
    s.mode = WeightMode::kUniform;
    return s;
  }
};

struct ScoreReport {
  std::string id;
  Label label = Label::kUnlabeled;
  std::vector<double> patch_losses;       // row-major grid order
  std::vector<std::size_t> rank_order;    // patch indices by descending loss
  std::vector<double> weights;            // weight per rank position
  std::size_t grid_cols = 0;
  double abnormal_score = 0.0;
};

/// Rank-weighted sum of patch losses. Sorting is descending by loss, ties
/// broken by patch index (row, col) ascending; only the first top_k ranks
/// contribute when top_k > 0.
inline ScoreReport abnormal_score(const std::vector<double>& losses, const RankWeightSchedule& schedule) {
  if (losses.empty()) throw DataError("abnormal_score needs at least one patch loss");
  ScoreReport r;
  r.patch_losses = losses;
  r.rank_order.resize(losses.size());
  std::iota(r.rank_order.begin(), r.rank_order.end(), std::size_t{0});
  std::stable_sort(r.rank_order.begin(), r.rank_order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  const std::size_t used = schedule.top_k == 0 ? losses.size() : std::min(schedule.top_k, losses.size());
  double score = 0.0;
  for (std::size_t k = 0; k < used; ++k) {
    const double w = schedule.weight(k);
    r.weights.push_back(w);
    score += w * losses[r.rank_order[k]];
  }
  r.abnormal_score = score;
  return r;
}

enum class InferenceMask { kNone, kMulti };

struct InferencePolicy {
  InferenceMask mode = InferenceMask::kNone;
  int samples = 4;  // masks averaged in multi mode
  MaskSpec mask;
  std::uint64_t seed = 0;
};

/// Scores every image: reconstruct (optionally from K masked copies), take
/// patch losses against the original, aggregate. Output order follows the
/// dataset.
template <typename T>
std::vector<ScoreReport> score_dataset(const Models<T>& models, const Dataset& ds, const PatchGrid& grid,
                                       const RankWeightSchedule& schedule, const InferencePolicy& policy = {},
                                       std::size_t batch_size = 32) {
  schedule.validate();
  if (ds.empty()) return {};
  const Shape expected = models.reconstructor.network().input_shape();
  if (ds.image_shape() != expected) {
    throw ShapeError("dataset image shape " + shape_string(ds.image_shape()) + " does not match checkpoint input " +
                     shape_string(expected));
  }
  grid.validate(ds.height(), ds.width());
  if (policy.mode == InferenceMask::kMulti) {
    if (policy.samples < 1) throw ConfigError("scoring.inference_mask.samples must be >= 1");
    policy.mask.validate(ds.height(), ds.width(), "scoring.inference_mask");
  }

  const std::size_t len = shape_size(ds.image_shape());
  std::vector<std::vector<double>> losses(ds.size());
  const std::size_t nbatches = (ds.size() + batch_size - 1) / batch_size;
  parallel_for(nbatches, [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<T> x = gather_batch<T>(ds, idx);
    const int passes = policy.mode == InferenceMask::kMulti ? policy.samples : 1;
    for (int pass = 0; pass < passes; ++pass) {
      Tensor<T> input = x;
      if (policy.mode == InferenceMask::kMulti) {
        MaskSpec spec = policy.mask;
        spec.seed = derive_seed(policy.seed, spec.seed);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const auto m = apply_mask(ds[idx[i]], spec, static_cast<std::uint64_t>(pass));
          std::transform(m.pixels.values().begin(), m.pixels.values().end(), input.data() + i * len,
                         [](float v) { return static_cast<T>(v); });
        }
      }
      const Tensor<T> rz = models.reconstructor.reconstruct(input);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto pl = patch_losses(batch_item(x, i), batch_item(rz, i), grid);
        auto& acc = losses[idx[i]];
        if (acc.empty()) acc.assign(pl.size(), 0.0);
        for (std::size_t k = 0; k < pl.size(); ++k) acc[k] += pl[k] / passes;
      }
    }
  });

  std::vector<ScoreReport> reports;
  reports.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ScoreReport r = abnormal_score(losses[i], schedule);
    r.id = ds[i].id;
    r.label = ds[i].label;
    r.grid_cols = grid.cols(ds.width());
    reports.push_back(std::move(r));
  }
  return reports;
}

/// Re-aggregates existing patch losses under another schedule.
inline std::vector<ScoreReport> rescore(const std::vector<ScoreReport>& reports, const RankWeightSchedule& schedule) {
  std::vector<ScoreReport> out;
  out.reserve(reports.size());
  for (const auto& r : reports) {
    ScoreReport s = abnormal_score(r.patch_losses, schedule);
    s.id = r.id;
    s.label = r.label;
    s.grid_cols = r.grid_cols;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report CSV: id,label,abnormal_score,patch_losses,rank_order

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_score_csv(const std::filesystem::path& file, const std::vector<ScoreReport>& reports) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << "id,label,abnormal_score,patch_losses,rank_order\n";
  for (const auto& r : reports) {
    out << r.id << ',' << to_string(r.label) << ',' << format_double(r.abnormal_score) << ',';
    for (std::size_t i = 0; i < r.patch_losses.size(); ++i) out << (i ? ";" : "") << format_double(r.patch_losses[i]);
    out << ',';
    for (std::size_t i = 0; i < r.rank_order.size(); ++i) out << (i ? ";" : "") << r.rank_order[i];
    out << '\n';
  }
}

inline std::vector<ScoreReport> read_score_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open score report " + file.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("id,label,abnormal_score", 0) != 0) throw DataError(file.string() + ": not a score report");
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(item);
    return parts;
  };
  std::vector<ScoreReport> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    ScoreReport r;
    try {
      r.id = f[0];
      r.label = parse_label(f[1]);
      r.abnormal_score = std::stod(f[2]);
      for (const auto& v : split(f[3], ';')) r.patch_losses.push_back(std::stod(v));
      for (const auto& v : split(f[4], ';')) r.rank_order.push_back(std::stoul(v));
    } catch (const std::logic_error& e) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps

enum class HeatmapScale { kPerImage, kFixed };

/// Grid-cell image (rows*cell x cols*cell) of normalized patch losses. Per
/// image min-max normalization by default; equal losses render mid-gray.
inline RawImage render_heatmap(const ScoreReport& r, std::size_t grid_rows, std::size_t grid_cols, int cell,
                               HeatmapScale scale = HeatmapScale::kPerImage, double fixed_max = 1.0) {
  if (r.patch_losses.size() != grid_rows * grid_cols) throw ShapeError("heatmap: loss count does not match grid");
  const auto [lo_it, hi_it] = std::minmax_element(r.patch_losses.begin(), r.patch_losses.end());
  const double lo = scale == HeatmapScale::kFixed ? 0.0 : *lo_it;
  const double hi = scale == HeatmapScale::kFixed ? fixed_max : *hi_it;
  RawImage img{static_cast<int>(grid_cols) * cell, static_cast<int>(grid_rows) * cell, 1, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < r.patch_losses.size(); ++i) {
    const double v = hi > lo ? (r.patch_losses[i] - lo) / (hi - lo) : 0.5;
    const auto byte = to_byte(v);
    const int r0 = static_cast<int>(i / grid_cols) * cell, c0 = static_cast<int>(i % grid_cols) * cell;
    for (int y = r0; y < r0 + cell; ++y)
      for (int x = c0; x < c0 + cell; ++x) img.pixels[static_cast<std::size_t>(y) * img.width + x] = byte;
  }
  return img;
}

inline void emit_heatmap(const ScoreReport& r, std::size_t grid_rows, std::size_t grid_cols, int cell,
                         const std::filesystem::path& out_path, HeatmapScale scale = HeatmapScale::kPerImage,
                         double fixed_max = 1.0) {
  write_png(out_path, render_heatmap(r, grid_rows, grid_cols, cell, scale, fixed_max));
}

}  // namespace patchrank
