#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchrank/errors.hpp"
#include "patchrank/tensor.hpp"

namespace patchrank {

enum class OptimizerKind { kSgd, kAdam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// SGD or Adam with bias correction. Moment buffers are created lazily on the
/// first step with the parameter shapes.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  const OptimizerSettings& settings() const { return settings_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != grads[i].shape()) {
        throw ShapeError("optimizer: gradient " + std::to_string(i) + " has shape " +
                         shape_string(grads[i].shape()) + ", parameter has " +
                         shape_string(params[i].shape()));
      }
      if (!grads[i].all_finite()) {
        throw TrainingError("non-finite gradient at optimizer step " + std::to_string(step_ + 1));
      }
    }
    ++step_;
    const T lr = static_cast<T>(settings_.learning_rate);
    if (settings_.kind == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        T* p = params[i].data();
        const T* g = grads[i].data();
        for (std::size_t j = 0; j < params[i].size(); ++j) p[j] -= lr * g[j];
      }
      return;
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
      }
    }
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1, static_cast<double>(step_))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2, static_cast<double>(step_))));
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    const T eps = static_cast<T>(settings_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      T* p = params[i].data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const T* g = grads[i].data();
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        m[j] = tb1 * m[j] + (T{1} - tb1) * g[j];
        v[j] = tb2 * v[j] + (T{1} - tb2) * g[j] * g[j];
        p[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
      }
    }
  }

 private:
  OptimizerSettings settings_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace patchrank
