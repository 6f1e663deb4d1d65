#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "patchrank/errors.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

/// Scores are clamped to [kScoreEps, 1 - kScoreEps] before taking logs.
inline constexpr double kScoreEps = 1e-7;

enum class AdversarialForm {
  kNonSaturating,  // R minimizes -log D(R(z))
  kSaturating,     // R minimizes log(1 - D(R(z)))
};

inline std::string_view to_string(AdversarialForm f) {
  return f == AdversarialForm::kNonSaturating ? "non_saturating" : "saturating";
}

inline AdversarialForm parse_adversarial_form(std::string_view s) {
  if (s == "non_saturating") return AdversarialForm::kNonSaturating;
  if (s == "saturating") return AdversarialForm::kSaturating;
  throw ConfigError("unknown adversarial form '" + std::string(s) + "'");
}

template <typename T>
struct LossWithGrad {
  double value = 0.0;
  Tensor<T> grad;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

/// Mean squared error over every element: the per-pixel form of ||x - R(z)||^2.
template <typename T>
double reconstruction_loss(const Tensor<T>& x, const Tensor<T>& rz) {
  require_same_shape(x, rz, "reconstruction_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(rz[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// MSE and its gradient with respect to rz.
template <typename T>
LossWithGrad<T> reconstruction_loss_grad(const Tensor<T>& x, const Tensor<T>& rz) {
  LossWithGrad<T> out{reconstruction_loss(x, rz), Tensor<T>(rz.shape())};
  const T scale = static_cast<T>(2.0 / static_cast<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) out.grad[i] = scale * (rz[i] - x[i]);
  return out;
}

/// Sum over non-overlapping square patches of the per-patch MSE, averaged
/// over the batch. Batch tensors are (N, C, H, W).
template <typename T>
LossWithGrad<T> patch_consistency_loss_grad(const Tensor<T>& x, const Tensor<T>& rz, int patch_size) {
  require_same_shape(x, rz, "patch_consistency_loss");
  const std::size_t n = x.dim(0);
  const double patch_elems = static_cast<double>(x.dim(1)) * patch_size * patch_size;
  LossWithGrad<T> out{0.0, Tensor<T>(rz.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(rz[i]) - static_cast<double>(x[i]);
    acc += d * d;
    out.grad[i] = static_cast<T>(2.0 * d / (patch_elems * static_cast<double>(n)));
  }
  out.value = acc / (patch_elems * static_cast<double>(n));
  return out;
}

namespace detail {

inline double clamp_score(double p) { return std::clamp(p, kScoreEps, 1.0 - kScoreEps); }

// d/dp of -log(clamp(p)); zero where the clamp is active.
inline double neg_log_grad(double p) { return (p < kScoreEps || p > 1.0 - kScoreEps) ? 0.0 : -1.0 / p; }
// d/dp of -log(1 - clamp(p)).
inline double neg_log1m_grad(double p) {
  return (p < kScoreEps || p > 1.0 - kScoreEps) ? 0.0 : 1.0 / (1.0 - p);
}

}  // namespace detail

template <typename T>
struct DiscriminatorLoss {
  double value = 0.0;
  Tensor<T> grad_real;
  Tensor<T> grad_fake;
};

/// -mean(log D(x)) - mean(log(1 - D(R(z)))) over grid cells and batch.
template <typename T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  require_same_shape(d_real, d_fake, "discriminator_loss");
  const double n = static_cast<double>(d_real.size());
  DiscriminatorLoss<T> out{0.0, Tensor<T>(d_real.shape()), Tensor<T>(d_fake.shape())};
  double real = 0.0, fake = 0.0;
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    const double pr = d_real[i], pf = d_fake[i];
    real -= std::log(detail::clamp_score(pr));
    fake -= std::log(1.0 - detail::clamp_score(pf));
    out.grad_real[i] = static_cast<T>(detail::neg_log_grad(pr) / n);
    out.grad_fake[i] = static_cast<T>(detail::neg_log1m_grad(pf) / n);
  }
  out.value = (real + fake) / n;
  return out;
}

/// Reconstructor's adversarial term on D(R(z)). Non-saturating: -mean(log p);
/// saturating: mean(log(1 - p)).
template <typename T>
LossWithGrad<T> generator_adversarial_loss(const Tensor<T>& d_fake,
                                           AdversarialForm form = AdversarialForm::kNonSaturating) {
  const double n = static_cast<double>(d_fake.size());
  LossWithGrad<T> out{0.0, Tensor<T>(d_fake.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = d_fake[i];
    if (form == AdversarialForm::kNonSaturating) {
      acc -= std::log(detail::clamp_score(p));
      out.grad[i] = static_cast<T>(detail::neg_log_grad(p) / n);
    } else {
      acc += std::log(1.0 - detail::clamp_score(p));
      out.grad[i] = static_cast<T>(-detail::neg_log1m_grad(p) / n);
    }
  }
  out.value = acc / n;
  return out;
}

}  // namespace patchrank
