#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "patchrank/data.hpp"
#include "patchrank/models.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank::testing {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = info ? std::string(info->test_suite_name()) + "-" + info->name() : "patchrank";
    for (auto& c : name)
      if (c == '/') c = '_';
    path_ = std::filesystem::temp_directory_path() /
            ("patchrank-" + name + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Small architecture for fast training tests: 32x32 images, 16-pixel cells.
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.image_size = 32;
  m.patch_size = 16;
  m.encoder_channels = {4, 8};
  m.discriminator_channels = {4, 8};
  return m;
}

inline Dataset constant_dataset(std::size_t count, std::size_t size, float value, Split split = Split::kTrain) {
  std::vector<ImageSample> samples;
  for (std::size_t i = 0; i < count; ++i) {
    samples.push_back({"img-" + std::to_string(i), Tensor<float>({1, size, size}, value), Label::kNormal});
  }
  return Dataset(split, std::move(samples));
}

}  // namespace patchrank::testing
