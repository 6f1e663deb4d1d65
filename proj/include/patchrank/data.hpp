#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/image_io.hpp"
#include "patchrank/parallel.hpp"
#include "patchrank/random.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

enum class Label { kNormal, kAbnormal, kUnlabeled };
enum class Split { kTrain, kTest };

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::kNormal: return "normal";
    case Label::kAbnormal: return "abnormal";
    case Label::kUnlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline Label parse_label(std::string_view s) {
  if (s == "normal") return Label::kNormal;
  if (s == "abnormal") return Label::kAbnormal;
  if (s == "unlabeled" || s.empty()) return Label::kUnlabeled;
  throw ConfigError("unknown label '" + std::string(s) + "'");
}

inline std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

/// One image: pixels (channels, height, width) in [0, 1].
struct ImageSample {
  std::string id;
  Tensor<float> pixels;
  Label label = Label::kUnlabeled;
};

/// Ordered, uniformly shaped collection of samples. A train split holds
/// normal samples only.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Split split, std::vector<ImageSample> samples) : split_(split), samples_(std::move(samples)) {
    if (samples_.empty()) return;
    const Shape& shape = samples_.front().pixels.shape();
    if (shape.size() != 3) throw ShapeError("image samples must be (channels, height, width)");
    for (const auto& s : samples_) {
      if (s.pixels.shape() != shape) {
        throw ShapeError("sample '" + s.id + "' has shape " + shape_string(s.pixels.shape()) +
                         ", dataset uses " + shape_string(shape));
      }
      for (float v : s.pixels.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("sample '" + s.id + "' has a pixel outside [0,1]");
      }
      if (split_ == Split::kTrain && s.label != Label::kNormal) {
        throw DataError("train split must contain only normal samples; '" + s.id + "' is " +
                        std::string(to_string(s.label)));
      }
    }
  }

  Split split() const { return split_; }
  const std::vector<ImageSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const ImageSample& operator[](std::size_t i) const { return samples_[i]; }

  std::size_t channels() const { return empty() ? 0 : samples_.front().pixels.dim(0); }
  std::size_t height() const { return empty() ? 0 : samples_.front().pixels.dim(1); }
  std::size_t width() const { return empty() ? 0 : samples_.front().pixels.dim(2); }
  Shape image_shape() const { return empty() ? Shape{} : samples_.front().pixels.shape(); }

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(
        std::count_if(samples_.begin(), samples_.end(), [l](const auto& s) { return s.label == l; }));
  }

  void require_patch_multiple(int patch_size) const {
    if (empty()) return;
    const auto p = static_cast<std::size_t>(patch_size);
    if (p == 0 || height() % p != 0 || width() % p != 0) {
      throw ConfigError("image size " + std::to_string(height()) + "x" + std::to_string(width()) +
                        " is not a multiple of patch size " + std::to_string(patch_size));
    }
  }

 private:
  Split split_ = Split::kTest;
  std::vector<ImageSample> samples_;
};

/// Order-sensitive content hash over ids, labels and pixel bytes (hex).
inline std::string dataset_hash(const Dataset& ds) {
  std::uint64_t h = fnv1a(to_string(ds.split()));
  for (const auto& s : ds.samples()) {
    h = fnv1a(s.id, h);
    h = fnv1a(to_string(s.label), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(s.pixels.data()),
                               s.pixels.size() * sizeof(float)),
              h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

template <typename T>
struct Range {
  T min{};
  T max{};
  bool operator==(const Range&) const = default;
};

struct SynthSpec {
  int train_count = 2000;
  int test_normal_count = 200;
  int test_abnormal_count = 200;
  int image_size = 64;
  int channels = 1;
  double noise_smoothness = 4.0;   // Gaussian low-pass sigma, pixels
  double noise_amplitude = 0.08;   // std of the filtered noise
  double pattern_frequency = 3.0;  // sinusoid cycles across the image
  double pattern_amplitude = 0.15;
  Range<int> blob_count{1, 3};
  Range<double> blob_radius{4.0, 10.0};  // ellipse semi-axes, pixels
  Range<double> blob_delta{0.3, 0.5};    // absolute intensity change
  std::uint64_t seed = 1;

  /// Throws ConfigError with a field path on the first violated constraint.
  void validate(const std::string& prefix = "synth") const {
    auto fail = [&](const std::string& field, const std::string& why) {
      throw ConfigError(prefix + "." + field + ": " + why);
    };
    if (train_count < 0) fail("train_count", "must be >= 0");
    if (test_normal_count < 0) fail("test_normal_count", "must be >= 0");
    if (test_abnormal_count < 0) fail("test_abnormal_count", "must be >= 0");
    if (image_size < 8) fail("image_size", "must be >= 8");
    if (channels != 1 && channels != 3) fail("channels", "must be 1 or 3");
    if (!(noise_smoothness > 0)) fail("noise_smoothness", "must be > 0");
    if (!(noise_amplitude >= 0)) fail("noise_amplitude", "must be >= 0");
    if (!(pattern_frequency >= 0)) fail("pattern_frequency", "must be >= 0");
    if (!(pattern_amplitude >= 0)) fail("pattern_amplitude", "must be >= 0");
    if (blob_count.min < 1 || blob_count.max < blob_count.min) fail("blob_count", "need 1 <= min <= max");
    if (!(blob_radius.min > 0) || !(blob_radius.max < image_size / 2.0) || blob_radius.max < blob_radius.min) {
      fail("blob_radius", "must satisfy 0 < min <= max < image_size/2");
    }
    if (!(blob_delta.min > 0) || blob_delta.max < blob_delta.min || blob_delta.max > 1.0) {
      fail("blob_delta", "need 0 < min <= max <= 1");
    }
  }
};

/// One injected elliptical anomaly.
struct Blob {
  double cx = 0, cy = 0;
  double rx = 0, ry = 0;
  double angle = 0;
  double delta = 0;  // signed
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
};

struct SyntheticCorpus {
  Dataset train;
  Dataset test;
  std::vector<Tensor<float>> test_clean;  // each test image before injection
  std::vector<std::vector<Blob>> test_blobs;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with wrap-around borders.
inline std::vector<double> blur_periodic(const std::vector<double>& src, int n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  auto wrap = [n](int i) { return ((i % n) + n) % n; };
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0;
      for (int j = -r; j <= r; ++j) acc += k[j + r] * src[y * n + wrap(x + j)];
      tmp[y * n + x] = acc;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0;
      for (int j = -r; j <= r; ++j) acc += k[j + r] * tmp[wrap(y + j) * n + x];
      out[y * n + x] = acc;
    }
  return out;
}

inline Tensor<float> synth_texture(const SynthSpec& spec, Rng& rng) {
  const int n = spec.image_size;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(n) * n);
  for (double& v : noise) v = gauss(rng);
  noise = blur_periodic(noise, n, spec.noise_smoothness);
  double mean = 0, var = 0;
  for (double v : noise) mean += v;
  mean /= static_cast<double>(noise.size());
  for (double v : noise) var += (v - mean) * (v - mean);
  const double scale = var > 0 ? spec.noise_amplitude / std::sqrt(var / static_cast<double>(noise.size())) : 0.0;

  const double theta = unit(rng) * std::numbers::pi;
  const double phase = unit(rng) * 2.0 * std::numbers::pi;
  const double freq = spec.pattern_frequency * (0.75 + 0.5 * unit(rng));
  const double base = 0.5 + (unit(rng) - 0.5) * 0.1;

  const auto c = static_cast<std::size_t>(spec.channels);
  Tensor<float> img({c, static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double gain = c == 1 ? 1.0 : 0.85 + 0.1 * static_cast<double>(ch);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double u = (x * std::cos(theta) + y * std::sin(theta)) / n;
        const double v = base + gain * ((noise[y * n + x] - mean) * scale +
                                        spec.pattern_amplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase));
        img.at(ch, y, x) = static_cast<float>(std::clamp(v, 0.05, 0.95));
      }
  }
  return img;
}

inline bool inside_blob(const Blob& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double u = (dx * std::cos(b.angle) + dy * std::sin(b.angle)) / b.rx;
  const double v = (-dx * std::sin(b.angle) + dy * std::cos(b.angle)) / b.ry;
  return u * u + v * v <= 1.0;
}

inline std::vector<Blob> inject_blobs(const SynthSpec& spec, Rng& rng, Tensor<float>& img) {
  const int n = spec.image_size;
  std::uniform_int_distribution<int> count(spec.blob_count.min, spec.blob_count.max);
  std::uniform_real_distribution<double> radius(spec.blob_radius.min, spec.blob_radius.max);
  std::uniform_real_distribution<double> delta(spec.blob_delta.min, spec.blob_delta.max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
  for (Blob& b : blobs) {
    b.rx = radius(rng);
    b.ry = radius(rng);
    b.angle = unit(rng) * std::numbers::pi;
    b.delta = (unit(rng) < 0.5 ? -1.0 : 1.0) * delta(rng);
    const double r = std::max(b.rx, b.ry);
    b.cx = r + unit(rng) * (n - 1 - 2 * r);
    b.cy = r + unit(rng) * (n - 1 - 2 * r);
    b.x0 = std::max(0, static_cast<int>(std::floor(b.cx - r)));
    b.y0 = std::max(0, static_cast<int>(std::floor(b.cy - r)));
    b.x1 = std::min(n - 1, static_cast<int>(std::ceil(b.cx + r)));
    b.y1 = std::min(n - 1, static_cast<int>(std::ceil(b.cy + r)));
    for (std::size_t ch = 0; ch < img.dim(0); ++ch)
      for (int y = b.y0; y <= b.y1; ++y)
        for (int x = b.x0; x <= b.x1; ++x) {
          if (!inside_blob(b, x, y)) continue;
          float& p = img.at(ch, y, x);
          p = static_cast<float>(std::clamp(p + b.delta, 0.0, 1.0));
        }
  }
  return blobs;
}

inline std::string numbered(std::string_view prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return std::string(prefix) + buf;
}

}  // namespace detail

/// Seeded desk-scale corpus: smooth textures (low-pass noise plus a
/// sinusoidal pattern); abnormal test images carry bright or dark elliptical
/// blobs. Each image draws from its own stream keyed by its id.
inline SyntheticCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SyntheticCorpus out;
  std::vector<ImageSample> train(static_cast<std::size_t>(spec.train_count));
  parallel_for(train.size(), [&](std::size_t i) {
    auto& s = train[i];
    s.id = detail::numbered("train-", static_cast<int>(i));
    Rng rng(derive_seed(spec.seed, s.id, 0));
    s.pixels = detail::synth_texture(spec, rng);
    s.label = Label::kNormal;
  });

  const std::size_t n_norm = static_cast<std::size_t>(spec.test_normal_count);
  const std::size_t total = n_norm + static_cast<std::size_t>(spec.test_abnormal_count);
  std::vector<ImageSample> test(total);
  out.test_clean.resize(total);
  out.test_blobs.resize(total);
  parallel_for(total, [&](std::size_t i) {
    auto& s = test[i];
    const bool abnormal = i >= n_norm;
    s.id = abnormal ? detail::numbered("test-abnormal-", static_cast<int>(i - n_norm))
                    : detail::numbered("test-normal-", static_cast<int>(i));
    Rng rng(derive_seed(spec.seed, s.id, 0));
    s.pixels = detail::synth_texture(spec, rng);
    out.test_clean[i] = s.pixels;
    s.label = abnormal ? Label::kAbnormal : Label::kNormal;
    if (abnormal) out.test_blobs[i] = detail::inject_blobs(spec, rng, s.pixels);
  });
  out.train = Dataset(Split::kTrain, std::move(train));
  out.test = Dataset(Split::kTest, std::move(test));
  return out;
}

// ---------------------------------------------------------------------------
// Folder ingestion

struct IngestOptions {
  std::map<std::string, Label> label_rule{{"normal", Label::kNormal}, {"abnormal", Label::kAbnormal}};
  int target_size = 64;
  int channels = 1;
};

struct IngestResult {
  Dataset dataset;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> paths;  // source path per sample, dataset order
};

/// Reads every image below `root`. Each direct subfolder is labelled through
/// `label_rule` (unmapped folders are skipped); files directly in `root` use
/// the rule entry "." if present, else they are unlabeled. Ids are relative
/// paths without extension, and the dataset is sorted by them.
inline IngestResult ingest_folder(const std::filesystem::path& root, Split split, const IngestOptions& opts) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset folder does not exist: " + root.string());
  if (opts.channels != 1 && opts.channels != 3) throw ConfigError("ingest channels must be 1 or 3");
  if (opts.target_size < 1) throw ConfigError("ingest target_size must be >= 1");

  IngestResult result;
  struct Entry {
    std::string id;
    fs::path path;
    Label label;
  };
  std::vector<Entry> entries;
  auto add_files = [&](const fs::path& dir, const std::string& prefix, Label label) {
    for (const auto& f : fs::directory_iterator(dir)) {
      if (!f.is_regular_file()) continue;
      entries.push_back({prefix + f.path().stem().string(), f.path(), label});
    }
  };
  std::set<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) subdirs.insert(e.path());
  for (const auto& dir : subdirs) {
    const std::string name = dir.filename().string();
    auto it = opts.label_rule.find(name);
    if (it == opts.label_rule.end()) {
      result.warnings.push_back("skipping unmapped folder " + dir.string());
      continue;
    }
    add_files(dir, name + "/", it->second);
  }
  auto root_rule = opts.label_rule.find(".");
  add_files(root, "", root_rule == opts.label_rule.end() ? Label::kUnlabeled : root_rule->second);
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.id < b.id; });

  std::vector<std::optional<Tensor<float>>> decoded(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    if (auto raw = read_png(entries[i].path)) {
      decoded[i] = image_to_tensor(*raw, opts.channels, opts.target_size);
    }
  });

  std::vector<ImageSample> samples;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!decoded[i]) {
      ++result.skipped;
      result.warnings.push_back("skipping undecodable file " + entries[i].path.string());
      continue;
    }
    samples.push_back({entries[i].id, std::move(*decoded[i]), entries[i].label});
    result.paths.push_back(entries[i].path.string());
  }
  if (samples.empty()) throw DataError("no decodable images under " + root.string());
  result.dataset = Dataset(split, std::move(samples));
  return result;
}

/// Writes every sample as PNG under dir/<label>/<id>.png; returns the paths.
inline std::vector<std::string> write_dataset_pngs(const Dataset& ds, const std::filesystem::path& dir) {
  std::vector<std::string> paths(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds[i];
    const auto path = dir / std::string(to_string(s.label)) / (s.id + ".png");
    write_png(path, tensor_to_image(s.pixels));
    paths[i] = path.string();
  }
  return paths;
}

struct ManifestRow {
  std::string id;
  Label label;
  std::string path;
};

inline void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + file.string());
  out << "id,label,path\n";
  for (const auto& r : rows) out << r.id << ',' << to_string(r.label) << ',' << r.path << '\n';
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
struct Batch {
  Tensor<T> pixels;                  // (b, c, h, w)
  std::vector<std::size_t> indices;  // dataset positions, batch order
};

template <typename T = float>
Tensor<T> gather_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Shape shape = ds.image_shape();
  shape.insert(shape.begin(), indices.size());
  Tensor<T> out(shape);
  const std::size_t len = shape_size(ds.image_shape());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = ds[indices[b]].pixels;
    std::copy(px.values().begin(), px.values().end(), out.data() + b * len);
  }
  return out;
}

/// Seeded shuffle into batches of `batch_size`; the last batch may be short.
template <typename T = float>
std::vector<Batch<T>> split_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed) {
  if (ds.empty()) throw DataError("cannot batch an empty dataset");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch<T>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch<T> b;
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    b.pixels = gather_batch<T>(ds, b.indices);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace patchrank
