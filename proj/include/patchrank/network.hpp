#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/layers.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

/// Activations recorded by Network::forward for the matching backward call.
template <typename T>
struct ForwardCache {
  std::uint64_t network_id = 0;
  std::uint64_t version = 0;
  std::vector<Tensor<T>> activations;  // layer inputs followed by the final output
};

template <typename T>
struct NetworkGrads {
  std::vector<Tensor<T>> params;  // aligned with Network::params()
  Tensor<T> input;
};

/// A sequential stack of layers over a fixed per-sample input shape.
///
/// Parameters are stored as [weight, bias] pairs for every parametric layer,
/// in layer order. Any mutable access to the parameters bumps an internal
/// version so that forward caches taken before the mutation are rejected by
/// backward.
template <typename T>
class Network {
 public:
  Network() = default;

  Network(std::vector<LayerSpec> layers, Shape input_shape)
      : layers_(std::move(layers)), input_shape_(std::move(input_shape)), id_(next_id()) {
    shapes_.push_back(input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      shapes_.push_back(infer_output_shape(layers_[i], shapes_.back(), i));
      if (layers_[i].has_params()) {
        param_index_.push_back(params_.size());
        params_.emplace_back(layers_[i].weight_shape());
        params_.emplace_back(Shape{static_cast<std::size_t>(layers_[i].out_channels)});
      } else {
        param_index_.push_back(kNoParams);
      }
    }
  }

  Network(const Network& other)
      : layers_(other.layers_),
        input_shape_(other.input_shape_),
        shapes_(other.shapes_),
        param_index_(other.param_index_),
        params_(other.params_),
        id_(next_id()) {}

  Network& operator=(const Network& other) {
    if (this != &other) {
      Network copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return shapes_.back(); }
  const Shape& layer_output_shape(std::size_t i) const { return shapes_.at(i + 1); }

  std::span<const Tensor<T>> params() const { return params_; }
  std::span<Tensor<T>> mutable_params() {
    ++version_;
    return params_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// Zero-mean Gaussian weights, zero biases.
  void init_gaussian(double stddev, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    auto params = mutable_params();
    for (std::size_t i = 0; i < params.size(); i += 2) {
      for (auto& v : params[i].values()) v = static_cast<T>(dist(rng));
      params[i + 1].fill(T{0});
    }
  }

  /// Zero-mean Gaussian weights with std gain / sqrt(fan_in), zero biases.
  /// A deconv's fan-in counts the inputs that reach one output pixel.
  void init_fan_in(double gain, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto params = mutable_params();
    std::size_t p = 0;
    for (const auto& l : layers_) {
      if (!l.has_params()) continue;
      double fan_in = l.in_channels;
      if (l.kind == LayerKind::kConv2d) fan_in *= static_cast<double>(l.kernel) * l.kernel;
      if (l.kind == LayerKind::kDeconv2d) {
        const double reach = std::max(1.0, static_cast<double>(l.kernel) / l.stride);
        fan_in *= reach * reach;
      }
      std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
      for (auto& v : params[p].values()) v = static_cast<T>(dist(rng));
      params[p + 1].fill(T{0});
      p += 2;
    }
  }

  /// Runs the stack on a batch (N, input_shape...). When `cache` is given it
  /// receives everything backward needs.
  Tensor<T> forward(const Tensor<T>& batch, ForwardCache<T>* cache = nullptr) const {
    check_batch(batch);
    if (cache) {
      cache->network_id = id_;
      cache->version = version_;
      cache->activations.clear();
      cache->activations.reserve(layers_.size() + 1);
      cache->activations.push_back(batch);
    }
    Tensor<T> current = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      current = layer_forward(layers_[i], weight(i), bias(i), current, shapes_[i], shapes_[i + 1]);
      if (cache) cache->activations.push_back(current);
    }
    return current;
  }

  /// Gradients of a scalar loss w.r.t. parameters and input, given the
  /// upstream gradient dL/d(output).
  NetworkGrads<T> backward(const ForwardCache<T>& cache, const Tensor<T>& upstream) const {
    if (cache.network_id != id_ || cache.version != version_ ||
        cache.activations.size() != layers_.size() + 1) {
      throw InternalError("backward called with a stale or foreign forward cache");
    }
    if (upstream.shape() != cache.activations.back().shape()) {
      throw InternalError("upstream gradient shape " + shape_string(upstream.shape()) +
                          " does not match output " +
                          shape_string(cache.activations.back().shape()));
    }
    NetworkGrads<T> grads;
    grads.params.resize(params_.size());
    Tensor<T> g = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      LayerGrads<T> lg;
      g = layer_backward(layers_[i], weight(i), cache.activations[i], cache.activations[i + 1], g,
                         shapes_[i], shapes_[i + 1], &lg);
      if (param_index_[i] != kNoParams) {
        grads.params[param_index_[i]] = std::move(lg.weight);
        grads.params[param_index_[i] + 1] = std::move(lg.bias);
      }
    }
    grads.input = std::move(g);
    return grads;
  }

  /// FNV-1a over the raw parameter bytes; used to assert which network an
  /// update touched.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
      for (std::size_t i = 0; i < p.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

 private:
  static constexpr std::size_t kNoParams = static_cast<std::size_t>(-1);

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  const Tensor<T>* weight(std::size_t layer) const {
    return param_index_[layer] == kNoParams ? nullptr : &params_[param_index_[layer]];
  }
  const Tensor<T>* bias(std::size_t layer) const {
    return param_index_[layer] == kNoParams ? nullptr : &params_[param_index_[layer] + 1];
  }

  void check_batch(const Tensor<T>& batch) const {
    if (batch.rank() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
      const std::string first =
          layers_.empty() ? std::string("network input") : describe(layers_.front(), 0);
      throw ShapeError(first + ": batch shape " + shape_string(batch.shape()) +
                       " does not match expected (N," + shape_string(input_shape_).substr(1));
    }
  }

  std::vector<LayerSpec> layers_;
  Shape input_shape_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> param_index_;
  std::vector<Tensor<T>> params_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

/// Converts a network between element types, keeping architecture and values.
template <typename To, typename From>
Network<To> convert_network(const Network<From>& src) {
  Network<To> out(src.layers(), src.input_shape());
  auto dst = out.mutable_params();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src.params()[i].template cast<To>();
  return out;
}

}  // namespace patchrank
