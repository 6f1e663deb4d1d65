#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "patchrank/layers.hpp"
#include "patchrank/network.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

/// Central-difference estimate (loss(p + eps) - loss(p - eps)) / (2 eps) for
/// every scalar in `params`. Values are restored after each probe.
template <typename T>
std::vector<Tensor<T>> finite_difference_gradient(const std::function<double()>& loss_fn,
                                                  std::span<Tensor<T>> params, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("finite difference epsilon must be > 0");
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    Tensor<T> g(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T orig = p[i];
      p[i] = static_cast<T>(orig + epsilon);
      const double up = loss_fn();
      p[i] = static_cast<T>(orig - epsilon);
      const double down = loss_fn();
      p[i] = orig;
      g[i] = static_cast<T>((up - down) / (2.0 * epsilon));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Symmetric relative error with a small absolute floor so that two
/// near-zero gradients compare equal.
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
  LayerKind kind = LayerKind::kIdentity;
  int configurations = 0;
  std::size_t checked = 0;       // scalars compared (parameters and inputs)
  std::size_t within_tight = 0;  // scalars with relative error < tight_tol
  double max_rel_error = 0.0;
  double tight_tol = 1e-3;
  double loose_tol = 1e-2;
  double min_tight_fraction = 0.99;

  double tight_fraction() const {
    return checked == 0 ? 1.0 : static_cast<double>(within_tight) / static_cast<double>(checked);
  }
  bool passed() const {
    return checked > 0 && tight_fraction() >= min_tight_fraction && max_rel_error < loose_tol;
  }
};

namespace detail {

inline LayerSpec random_layer(LayerKind kind, std::mt19937_64& rng, Shape* input) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const auto c = static_cast<std::size_t>(pick(1, 4));
  switch (kind) {
    case LayerKind::kConv2d: {
      const int k = pick(1, 4), s = pick(1, 2), p = pick(0, k / 2);
      const int h = pick(std::max(k, 2), 8), w = pick(std::max(k, 2), 8);
      *input = {c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
      return LayerSpec::conv2d(static_cast<int>(c), pick(1, 4), k, s, p);
    }
    case LayerKind::kDeconv2d: {
      const int k = pick(2, 4), s = pick(1, 2), p = pick(0, (k - 1) / 2);
      *input = {c, static_cast<std::size_t>(pick(1, 4)), static_cast<std::size_t>(pick(1, 4))};
      return LayerSpec::deconv2d(static_cast<int>(c), pick(1, 4), k, s, p);
    }
    case LayerKind::kDense: {
      *input = {c, static_cast<std::size_t>(pick(1, 4)), static_cast<std::size_t>(pick(1, 4))};
      return LayerSpec::dense(static_cast<int>(shape_size(*input)), pick(1, 8));
    }
    case LayerKind::kLeakyRelu:
      *input = {c, static_cast<std::size_t>(pick(1, 8)), static_cast<std::size_t>(pick(1, 8))};
      return LayerSpec::leaky_relu(std::uniform_real_distribution<double>(0.01, 0.3)(rng));
    default:
      *input = {c, static_cast<std::size_t>(pick(1, 8)), static_cast<std::size_t>(pick(1, 8))};
      return LayerSpec::activation(kind);
  }
}

}  // namespace detail

/// Compares backward against central finite differences for `configurations`
/// random single-layer networks of the given kind, in double precision.
///
/// The probe loss is L = sum(c * y) + 0.5 * sum(y^2) with random c, so that
/// both the linear and curvature paths of backward are exercised. Inputs to
/// piecewise-linear activations are kept at least 0.1 away from the kink.
inline GradCheckResult check_layer_kind(LayerKind kind, int configurations, std::uint64_t seed,
                                        double epsilon = 1e-3) {
  GradCheckResult result;
  result.kind = kind;
  result.configurations = configurations;
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(kind) + 1)));
  const bool kinked = kind == LayerKind::kRelu || kind == LayerKind::kLeakyRelu;

  for (int cfg = 0; cfg < configurations; ++cfg) {
    Shape in_shape;
    LayerSpec spec = detail::random_layer(kind, rng, &in_shape);
    Network<double> net({spec}, in_shape);
    net.init_gaussian(0.5, rng());
    for (auto& p : net.mutable_params()) {
      if (p.rank() == 1) {
        std::normal_distribution<double> d(0.0, 0.5);
        for (auto& v : p.values()) v = d(rng);
      }
    }

    const std::size_t batch = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    Shape batch_shape = in_shape;
    batch_shape.insert(batch_shape.begin(), batch);
    Tensor<double> x(batch_shape);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> away(0.1, 1.0);
    for (auto& v : x.values()) {
      v = kinked ? (unit(rng) < 0 ? -away(rng) : away(rng)) : unit(rng);
    }

    Shape out_shape = net.output_shape();
    out_shape.insert(out_shape.begin(), batch);
    Tensor<double> coef(out_shape);
    for (auto& v : coef.values()) v = unit(rng);

    auto loss_of = [&](const Tensor<double>& out) {
      double l = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) l += coef[i] * out[i] + 0.5 * out[i] * out[i];
      return l;
    };

    ForwardCache<double> cache;
    Tensor<double> y = net.forward(x, &cache);
    Tensor<double> upstream(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) upstream[i] = coef[i] + y[i];
    NetworkGrads<double> analytic = net.backward(cache, upstream);

    auto record = [&](const Tensor<double>& a, const Tensor<double>& n) {
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = relative_error(a[i], n[i]);
        ++result.checked;
        if (e < result.tight_tol) ++result.within_tight;
        result.max_rel_error = std::max(result.max_rel_error, e);
      }
    };

    if (spec.has_params()) {
      Network<double>* np = &net;
      auto numeric = finite_difference_gradient<double>(
          [&] { return loss_of(np->forward(x)); }, net.mutable_params(), epsilon);
      for (std::size_t i = 0; i < numeric.size(); ++i) record(analytic.params[i], numeric[i]);
    }
    std::vector<Tensor<double>> inputs{x};
    auto numeric_in = finite_difference_gradient<double>(
        [&] { return loss_of(net.forward(inputs[0])); }, std::span<Tensor<double>>(inputs),
        epsilon);
    record(analytic.input, numeric_in[0]);
  }
  return result;
}

}  // namespace patchrank
