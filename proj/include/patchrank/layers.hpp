#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

enum class LayerKind {
  kConv2d,
  kDeconv2d,
  kDense,
  kLeakyRelu,
  kRelu,
  kSigmoid,
  kTanh,
  kUnitTanh,  // (tanh(x) + 1) / 2, maps onto [0, 1]
  kIdentity,  // "normalization off" placeholder; passes values through
};

inline constexpr std::array<LayerKind, 9> kAllLayerKinds = {
    LayerKind::kConv2d,  LayerKind::kDeconv2d, LayerKind::kDense,
    LayerKind::kLeakyRelu, LayerKind::kRelu,   LayerKind::kSigmoid,
    LayerKind::kTanh,    LayerKind::kUnitTanh, LayerKind::kIdentity};

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDeconv2d: return "deconv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kLeakyRelu: return "leaky-relu";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kTanh: return "tanh";
    case LayerKind::kUnitTanh: return "unit-tanh";
    case LayerKind::kIdentity: return "identity";
  }
  return "unknown";
}

inline LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : kAllLayerKinds) {
    if (to_string(k) == name) return k;
  }
  if (name == "batchless-norm-off") return LayerKind::kIdentity;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::kIdentity;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int in_channels = 0;
  int out_channels = 0;
  double slope = 0.2;  // leaky-relu only

  static LayerSpec conv2d(int in, int out, int kernel, int stride, int padding) {
    return {LayerKind::kConv2d, kernel, stride, padding, in, out};
  }
  static LayerSpec deconv2d(int in, int out, int kernel, int stride, int padding) {
    return {LayerKind::kDeconv2d, kernel, stride, padding, in, out};
  }
  static LayerSpec dense(int in, int out) { return {LayerKind::kDense, 1, 1, 0, in, out}; }
  static LayerSpec leaky_relu(double slope = 0.2) {
    LayerSpec s{LayerKind::kLeakyRelu};
    s.slope = slope;
    return s;
  }
  static LayerSpec activation(LayerKind kind) { return LayerSpec{kind}; }

  bool has_params() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kDeconv2d ||
           kind == LayerKind::kDense;
  }

  /// Weight tensor shape; bias is always (out_channels).
  Shape weight_shape() const {
    const auto k = static_cast<std::size_t>(kernel);
    const auto in = static_cast<std::size_t>(in_channels);
    const auto out = static_cast<std::size_t>(out_channels);
    switch (kind) {
      case LayerKind::kConv2d: return {out, in, k, k};
      case LayerKind::kDeconv2d: return {in, out, k, k};
      case LayerKind::kDense: return {out, in};
      default: return {};
    }
  }

  bool operator==(const LayerSpec&) const = default;
};

inline std::string describe(const LayerSpec& s, std::size_t index) {
  std::string out = "layer " + std::to_string(index) + " (" + std::string(to_string(s.kind));
  if (s.has_params()) {
    out += " " + std::to_string(s.in_channels) + "->" + std::to_string(s.out_channels);
  }
  return out + ")";
}

inline int conv_output_size(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

inline int deconv_output_size(int in, int kernel, int stride, int padding) {
  return (in - 1) * stride - 2 * padding + kernel;
}

/// Per-sample output shape of a layer, or ShapeError naming the layer.
inline Shape infer_output_shape(const LayerSpec& s, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(describe(s, index) + ": " + why + " (input " + shape_string(in) + ")");
  };
  switch (s.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kDeconv2d: {
      if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.in_channels < 1 ||
          s.out_channels < 1) {
        return fail("invalid kernel/stride/padding/channels");
      }
      if (in.size() != 3) return fail("expects (channels, height, width) input");
      if (in[0] != static_cast<std::size_t>(s.in_channels)) {
        return fail("expects " + std::to_string(s.in_channels) + " input channels");
      }
      const int h = static_cast<int>(in[1]);
      const int w = static_cast<int>(in[2]);
      const bool conv = s.kind == LayerKind::kConv2d;
      const int oh = conv ? conv_output_size(h, s.kernel, s.stride, s.padding)
                          : deconv_output_size(h, s.kernel, s.stride, s.padding);
      const int ow = conv ? conv_output_size(w, s.kernel, s.stride, s.padding)
                          : deconv_output_size(w, s.kernel, s.stride, s.padding);
      if (oh < 1 || ow < 1) return fail("output spatial size below 1");
      return {static_cast<std::size_t>(s.out_channels), static_cast<std::size_t>(oh),
              static_cast<std::size_t>(ow)};
    }
    case LayerKind::kDense: {
      if (s.in_channels < 1 || s.out_channels < 1) return fail("invalid feature counts");
      if (shape_size(in) != static_cast<std::size_t>(s.in_channels)) {
        return fail("expects " + std::to_string(s.in_channels) + " input features");
      }
      return {static_cast<std::size_t>(s.out_channels)};
    }
    default:
      return in;
  }
}

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int channels, height, width;  // spatial input of the im2col
  int kernel, stride, padding;
  int out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t positions() const { return static_cast<std::size_t>(out_h) * out_w; }
};

/// Writes the patch columns of one image into `cols`, a (rows x ld) row-major
/// block whose columns [col0, col0 + positions) belong to this image.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols, std::size_t ld, std::size_t col0) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ld + col0;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kj;
            dst[ow] = (iw < 0 || iw >= g.width) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into an image buffer.
template <typename T>
void col2im(const T* cols, std::size_t ld, std::size_t col0, const ConvGeometry& g, T* img) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ld + col0;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
          T* dst = img + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

/// (N, C, P) <-> (C, N*P) layout shuffles used around the batched GEMMs.
template <typename T>
void nchw_to_cn(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (i * c + ch) * p, p, dst + ch * n * p + i * p);
}

template <typename T>
void cn_to_nchw(const T* src, std::size_t n, std::size_t c, std::size_t p, T* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * n * p + i * p, p, dst + (i * c + ch) * p);
}

inline ConvGeometry conv_geometry(const LayerSpec& s, const Shape& in) {
  ConvGeometry g{static_cast<int>(in[0]), static_cast<int>(in[1]), static_cast<int>(in[2]),
                 s.kernel, s.stride, s.padding, 0, 0};
  g.out_h = conv_output_size(g.height, s.kernel, s.stride, s.padding);
  g.out_w = conv_output_size(g.width, s.kernel, s.stride, s.padding);
  return g;
}

// A deconv is the adjoint of a conv from its output space to its input
// space; this is that conv's geometry.
inline ConvGeometry deconv_geometry(const LayerSpec& s, const Shape& in, const Shape& out) {
  return ConvGeometry{static_cast<int>(out[0]), static_cast<int>(out[1]),
                      static_cast<int>(out[2]), s.kernel, s.stride, s.padding,
                      static_cast<int>(in[1]), static_cast<int>(in[2])};
}

}  // namespace detail

/// Parameter gradients of one layer (empty tensors for parameter-free layers).
template <typename T>
struct LayerGrads {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Forward pass of one layer on a batch (N, ...). `in_shape`/`out_shape` are
/// per-sample shapes from shape inference.
template <typename T>
Tensor<T> layer_forward(const LayerSpec& s, const Tensor<T>* weight, const Tensor<T>* bias,
                        const Tensor<T>& x, const Shape& in_shape, const Shape& out_shape) {
  using namespace detail;
  const std::size_t n = x.dim(0);
  Shape batch_out = out_shape;
  batch_out.insert(batch_out.begin(), n);
  Tensor<T> y(batch_out);
  const std::size_t count = x.size();
  const T* xp = x.data();
  T* yp = y.data();

  switch (s.kind) {
    case LayerKind::kConv2d: {
      const ConvGeometry g = conv_geometry(s, in_shape);
      const std::size_t rows = g.rows();
      const std::size_t p = g.positions();
      const std::size_t in_len = shape_size(in_shape);
      const auto co = static_cast<std::size_t>(s.out_channels);
      AlignedVector<T> cols(rows * n * p);
      for (std::size_t i = 0; i < n; ++i) im2col(xp + i * in_len, g, cols.data(), n * p, i * p);
      AlignedVector<T> out(co * n * p);
      MatMap<T>(out.data(), co, n * p).noalias() =
          ConstMatMap<T>(weight->data(), co, rows) * ConstMatMap<T>(cols.data(), rows, n * p);
      for (std::size_t c = 0; c < co; ++c) {
        const T b = (*bias)[c];
        T* row = out.data() + c * n * p;
        for (std::size_t j = 0; j < n * p; ++j) row[j] += b;
      }
      cn_to_nchw(out.data(), n, co, p, yp);
      break;
    }
    case LayerKind::kDeconv2d: {
      const ConvGeometry g = deconv_geometry(s, in_shape, out_shape);
      const std::size_t rows = g.rows();  // out_channels * k * k
      const std::size_t p = g.positions();  // input spatial positions
      const auto ci = static_cast<std::size_t>(s.in_channels);
      const std::size_t out_len = shape_size(out_shape);
      AlignedVector<T> xin(ci * n * p);
      nchw_to_cn(xp, n, ci, p, xin.data());
      AlignedVector<T> cols(rows * n * p);
      MatMap<T>(cols.data(), rows, n * p).noalias() =
          ConstMatMap<T>(weight->data(), ci, rows).transpose() *
          ConstMatMap<T>(xin.data(), ci, n * p);
      for (std::size_t i = 0; i < n; ++i) col2im(cols.data(), n * p, i * p, g, yp + i * out_len);
      const std::size_t plane = out_shape[1] * out_shape[2];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < out_shape[0]; ++c) {
          const T b = (*bias)[c];
          T* dst = yp + (i * out_shape[0] + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) dst[j] += b;
        }
      break;
    }
    case LayerKind::kDense: {
      const auto fi = static_cast<std::size_t>(s.in_channels);
      const auto fo = static_cast<std::size_t>(s.out_channels);
      MatMap<T> ym(yp, n, fo);
      ym.noalias() = ConstMatMap<T>(xp, n, fi) * ConstMatMap<T>(weight->data(), fo, fi).transpose();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < fo; ++j) ym(i, j) += (*bias)[j];
      break;
    }
    case LayerKind::kLeakyRelu: {
      const T a = static_cast<T>(s.slope);
      for (std::size_t i = 0; i < count; ++i) yp[i] = xp[i] > T{0} ? xp[i] : a * xp[i];
      break;
    }
    case LayerKind::kRelu:
      for (std::size_t i = 0; i < count; ++i) yp[i] = xp[i] > T{0} ? xp[i] : T{0};
      break;
    case LayerKind::kSigmoid:
      for (std::size_t i = 0; i < count; ++i) yp[i] = T{1} / (T{1} + std::exp(-xp[i]));
      break;
    case LayerKind::kTanh:
      for (std::size_t i = 0; i < count; ++i) yp[i] = std::tanh(xp[i]);
      break;
    case LayerKind::kUnitTanh:
      for (std::size_t i = 0; i < count; ++i) yp[i] = (std::tanh(xp[i]) + T{1}) * T{0.5};
      break;
    case LayerKind::kIdentity:
      std::copy_n(xp, count, yp);
      break;
  }
  return y;
}

/// Backward pass of one layer. `x` is the layer input and `y` its output from
/// the matching forward call; `dy` is the upstream gradient. Returns dL/dx and
/// fills `grads` for parametric layers.
template <typename T>
Tensor<T> layer_backward(const LayerSpec& s, const Tensor<T>* weight, const Tensor<T>& x,
                         const Tensor<T>& y, const Tensor<T>& dy, const Shape& in_shape,
                         const Shape& out_shape, LayerGrads<T>* grads) {
  using namespace detail;
  const std::size_t n = x.dim(0);
  Tensor<T> dx(x.shape());
  const std::size_t count = x.size();
  const T* xp = x.data();
  const T* yp = y.data();
  const T* gp = dy.data();
  T* dp = dx.data();

  switch (s.kind) {
    case LayerKind::kConv2d: {
      const ConvGeometry g = conv_geometry(s, in_shape);
      const std::size_t rows = g.rows();
      const std::size_t p = g.positions();
      const std::size_t in_len = shape_size(in_shape);
      const auto co = static_cast<std::size_t>(s.out_channels);
      AlignedVector<T> cols(rows * n * p);
      for (std::size_t i = 0; i < n; ++i) im2col(xp + i * in_len, g, cols.data(), n * p, i * p);
      AlignedVector<T> gmat(co * n * p);
      nchw_to_cn(gp, n, co, p, gmat.data());
      ConstMatMap<T> gm(gmat.data(), co, n * p);
      grads->weight = Tensor<T>(s.weight_shape());
      MatMap<T>(grads->weight.data(), co, rows).noalias() =
          gm * ConstMatMap<T>(cols.data(), rows, n * p).transpose();
      grads->bias = Tensor<T>({co});
      for (std::size_t c = 0; c < co; ++c) grads->bias[c] = gm.row(static_cast<Eigen::Index>(c)).sum();
      MatMap<T>(cols.data(), rows, n * p).noalias() =
          ConstMatMap<T>(weight->data(), co, rows).transpose() * gm;
      for (std::size_t i = 0; i < n; ++i) col2im(cols.data(), n * p, i * p, g, dp + i * in_len);
      break;
    }
    case LayerKind::kDeconv2d: {
      const ConvGeometry g = deconv_geometry(s, in_shape, out_shape);
      const std::size_t rows = g.rows();
      const std::size_t p = g.positions();
      const auto ci = static_cast<std::size_t>(s.in_channels);
      const std::size_t out_len = shape_size(out_shape);
      AlignedVector<T> dcols(rows * n * p);
      for (std::size_t i = 0; i < n; ++i) im2col(gp + i * out_len, g, dcols.data(), n * p, i * p);
      ConstMatMap<T> dc(dcols.data(), rows, n * p);
      AlignedVector<T> xin(ci * n * p);
      nchw_to_cn(xp, n, ci, p, xin.data());
      grads->weight = Tensor<T>(s.weight_shape());
      MatMap<T>(grads->weight.data(), ci, rows).noalias() =
          ConstMatMap<T>(xin.data(), ci, n * p) * dc.transpose();
      AlignedVector<T> dxin(ci * n * p);
      MatMap<T>(dxin.data(), ci, n * p).noalias() = ConstMatMap<T>(weight->data(), ci, rows) * dc;
      cn_to_nchw(dxin.data(), n, ci, p, dp);
      const std::size_t co = out_shape[0];
      const std::size_t plane = out_shape[1] * out_shape[2];
      grads->bias = Tensor<T>({co});
      for (std::size_t c = 0; c < co; ++c) {
        T acc{0};
        for (std::size_t i = 0; i < n; ++i) {
          const T* src = gp + (i * co + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) acc += src[j];
        }
        grads->bias[c] = acc;
      }
      break;
    }
    case LayerKind::kDense: {
      const auto fi = static_cast<std::size_t>(s.in_channels);
      const auto fo = static_cast<std::size_t>(s.out_channels);
      ConstMatMap<T> gm(gp, n, fo);
      grads->weight = Tensor<T>(s.weight_shape());
      MatMap<T>(grads->weight.data(), fo, fi).noalias() = gm.transpose() * ConstMatMap<T>(xp, n, fi);
      grads->bias = Tensor<T>({fo});
      for (std::size_t j = 0; j < fo; ++j) grads->bias[j] = gm.col(static_cast<Eigen::Index>(j)).sum();
      MatMap<T>(dp, n, fi).noalias() = gm * ConstMatMap<T>(weight->data(), fo, fi);
      break;
    }
    case LayerKind::kLeakyRelu: {
      const T a = static_cast<T>(s.slope);
      for (std::size_t i = 0; i < count; ++i) dp[i] = xp[i] > T{0} ? gp[i] : a * gp[i];
      break;
    }
    case LayerKind::kRelu:
      for (std::size_t i = 0; i < count; ++i) dp[i] = xp[i] > T{0} ? gp[i] : T{0};
      break;
    case LayerKind::kSigmoid:
      for (std::size_t i = 0; i < count; ++i) dp[i] = gp[i] * yp[i] * (T{1} - yp[i]);
      break;
    case LayerKind::kTanh:
      for (std::size_t i = 0; i < count; ++i) dp[i] = gp[i] * (T{1} - yp[i] * yp[i]);
      break;
    case LayerKind::kUnitTanh:
      // y = (t + 1) / 2  =>  dy/dx = (1 - t^2) / 2 = 2 y (1 - y)
      for (std::size_t i = 0; i < count; ++i) dp[i] = gp[i] * T{2} * yp[i] * (T{1} - yp[i]);
      break;
    case LayerKind::kIdentity:
      std::copy_n(gp, count, dp);
      break;
  }
  return dx;
}

}  // namespace patchrank
