#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <string_view>
#include <cstdint>
#include <string>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/masking.hpp"
#include "patchrank/network.hpp"

namespace patchrank {

enum class InitScheme { kFixedStd, kFanIn };

inline std::string_view to_string(InitScheme s) { return s == InitScheme::kFixedStd ? "fixed_std" : "fan_in"; }

inline InitScheme parse_init_scheme(std::string_view s) {
  if (s == "fixed_std") return InitScheme::kFixedStd;
  if (s == "fan_in") return InitScheme::kFanIn;
  throw ConfigError("unknown init scheme '" + std::string(s) + "'");
}

template <typename T>
void initialize(Network<T>& net, const struct ModelConfig& cfg, std::uint64_t seed);

/// Architecture of the reconstructor and the patch discriminator.
struct ModelConfig {
  int image_size = 64;
  int channels = 1;
  int patch_size = 32;
  // Encoder widths, one stride-2 conv each; the decoder mirrors them.
  std::vector<int> encoder_channels{32, 64, 64, 32};
  // Discriminator conv widths; kernel == stride per layer so that the
  // strides multiply to patch_size and output cells never overlap.
  std::vector<int> discriminator_channels{16, 32, 64};
  double leaky_slope = 0.2;
  // Weight init: fixed-std Gaussian (init_std) or fan-in scaled Gaussian.
  InitScheme init = InitScheme::kFixedStd;
  double init_std = 0.02;

  void validate(const std::string& prefix = "model") const {
    auto fail = [&](const std::string& field, const std::string& why) {
      throw ConfigError(prefix + "." + field + ": " + why);
    };
    if (channels != 1 && channels != 3) fail("channels", "must be 1 or 3");
    if (encoder_channels.empty()) fail("encoder_channels", "must not be empty");
    for (int c : encoder_channels)
      if (c < 1) fail("encoder_channels", "widths must be >= 1");
    const int down = 1 << encoder_channels.size();
    if (image_size < down || image_size % down != 0) {
      fail("image_size", "must be a positive multiple of " + std::to_string(down));
    }
    if (discriminator_channels.empty()) fail("discriminator_channels", "must not be empty");
    for (int c : discriminator_channels)
      if (c < 1) fail("discriminator_channels", "widths must be >= 1");
    if (patch_size < 1 || !std::has_single_bit(static_cast<unsigned>(patch_size)) ||
        std::countr_zero(static_cast<unsigned>(patch_size)) < static_cast<int>(discriminator_channels.size())) {
      fail("patch_size", "must be a power of two >= 2^(discriminator layers)");
    }
    if (image_size % patch_size != 0) fail("patch_size", "must divide image_size");
    if (!(init_std > 0)) fail("init_std", "must be > 0");
  }
};

/// Strides (= kernels) of the discriminator convs: patch_size = 2^e split as
/// evenly as possible, larger factors first.
inline std::vector<int> discriminator_strides(int patch_size, std::size_t layers) {
  const int e = std::countr_zero(static_cast<unsigned>(patch_size));
  std::vector<int> out;
  for (std::size_t i = 0; i < layers; ++i) {
    const int share = e / static_cast<int>(layers) + (static_cast<int>(i) < e % static_cast<int>(layers) ? 1 : 0);
    out.push_back(1 << share);
  }
  return out;
}

inline std::vector<LayerSpec> reconstructor_layers(const ModelConfig& cfg) {
  std::vector<LayerSpec> layers;
  int in = cfg.channels;
  for (int c : cfg.encoder_channels) {
    layers.push_back(LayerSpec::conv2d(in, c, 4, 2, 1));
    layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
    in = c;
  }
  for (std::size_t i = cfg.encoder_channels.size(); i-- > 0;) {
    const int out = i == 0 ? cfg.channels : cfg.encoder_channels[i - 1];
    layers.push_back(LayerSpec::deconv2d(in, out, 4, 2, 1));
    layers.push_back(LayerSpec::activation(i == 0 ? LayerKind::kUnitTanh : LayerKind::kRelu));
    in = out;
  }
  return layers;
}

inline std::vector<LayerSpec> discriminator_layers(const ModelConfig& cfg) {
  std::vector<LayerSpec> layers;
  const auto strides = discriminator_strides(cfg.patch_size, cfg.discriminator_channels.size());
  int in = cfg.channels;
  for (std::size_t i = 0; i < strides.size(); ++i) {
    layers.push_back(LayerSpec::conv2d(in, cfg.discriminator_channels[i], strides[i], strides[i], 0));
    layers.push_back(LayerSpec::leaky_relu(cfg.leaky_slope));
    in = cfg.discriminator_channels[i];
  }
  layers.push_back(LayerSpec::conv2d(in, 1, 1, 1, 0));
  layers.push_back(LayerSpec::activation(LayerKind::kSigmoid));
  return layers;
}

inline Shape image_shape(const ModelConfig& cfg) {
  return {static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.image_size),
          static_cast<std::size_t>(cfg.image_size)};
}

template <typename T>
void initialize(Network<T>& net, const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.init == InitScheme::kFanIn) {
    net.init_fan_in(std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)), seed);
  } else {
    net.init_gaussian(cfg.init_std, seed);
  }
}

/// Encoder-decoder R mapping a masked image z to R(z), same shape, in [0, 1].
template <typename T>
class Reconstructor {
 public:
  Reconstructor() = default;
  explicit Reconstructor(Network<T> net) : net_(std::move(net)) {
    if (net_.output_shape() != net_.input_shape()) {
      throw ShapeError("reconstructor output shape " + shape_string(net_.output_shape()) +
                       " differs from input " + shape_string(net_.input_shape()));
    }
  }
  Reconstructor(const ModelConfig& cfg, std::uint64_t seed)
      : Reconstructor(Network<T>(reconstructor_layers(cfg), image_shape(cfg))) {
    initialize(net_, cfg, seed);
  }

  Network<T>& network() { return net_; }
  const Network<T>& network() const { return net_; }

  Tensor<T> reconstruct(const Tensor<T>& batch, ForwardCache<T>* cache = nullptr) const {
    return net_.forward(batch, cache);
  }

  Tensor<T> reconstruct(const MaskedImage& z) const {
    Shape s = z.pixels.shape();
    s.insert(s.begin(), 1);
    const Tensor<T> batch = z.pixels.template cast<T>().reshaped(s);
    return batch_item(net_.forward(batch), 0);
  }

 private:
  Network<T> net_;
};

/// Pixel rectangle [y0, y1) x [x0, x1).
struct PixelRect {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

/// Fully convolutional D producing an S x S grid of realism scores in (0, 1).
template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(Network<T> net) : net_(std::move(net)) {
    const Shape& out = net_.output_shape();
    if (out.size() != 3 || out[0] != 1) {
      throw ShapeError("discriminator must output a (1, S, S) grid, got " + shape_string(out));
    }
  }
  PatchDiscriminator(const ModelConfig& cfg, std::uint64_t seed)
      : PatchDiscriminator(Network<T>(discriminator_layers(cfg), image_shape(cfg))) {
    initialize(net_, cfg, seed);
  }

  Network<T>& network() { return net_; }
  const Network<T>& network() const { return net_; }

  std::size_t grid_rows() const { return net_.output_shape()[1]; }
  std::size_t grid_cols() const { return net_.output_shape()[2]; }

  /// (N, 1, S, S) scores for a batch (N, C, H, W).
  Tensor<T> discriminate(const Tensor<T>& batch, ForwardCache<T>* cache = nullptr) const {
    return net_.forward(batch, cache);
  }

  /// Input pixels that can influence grid cell (row, col), clipped to the
  /// image.
  PixelRect receptive_field(std::size_t row, std::size_t col) const {
    long jump = 1, size = 1, start = 0;
    for (const auto& l : net_.layers()) {
      if (l.kind != LayerKind::kConv2d) continue;
      start -= static_cast<long>(l.padding) * jump;
      size += static_cast<long>(l.kernel - 1) * jump;
      jump *= l.stride;
    }
    const long h = static_cast<long>(net_.input_shape()[1]);
    const long w = static_cast<long>(net_.input_shape()[2]);
    const long y0 = start + static_cast<long>(row) * jump;
    const long x0 = start + static_cast<long>(col) * jump;
    return {static_cast<int>(std::max(0L, y0)), static_cast<int>(std::max(0L, x0)),
            static_cast<int>(std::min(h, y0 + size)), static_cast<int>(std::min(w, x0 + size))};
  }

 private:
  Network<T> net_;
};

}  // namespace patchrank
