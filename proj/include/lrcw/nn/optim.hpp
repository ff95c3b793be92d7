#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/nn/layers.hpp"

namespace lrcw::nn {

/// AdamW with decoupled weight decay and bias-corrected moments.
struct AdamW {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t step_count = 0;

  /// One update at step t = step_count + 1. Rejects non-finite gradients
  /// before touching any parameter.
  template <class T>
  void step(std::span<Param<T>* const> params) {
    for (const Param<T>* p : params)
      for (std::size_t i = 0; i < p->grad.size(); ++i)
        if (!std::isfinite(p->grad[i]))
          throw NumericError("non-finite gradient in " + p->name + " at element " + std::to_string(i) +
                             " (step " + std::to_string(step_count + 1) + ")");
    ++step_count;
    const double t = static_cast<double>(step_count);
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2, t));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T lr_t = static_cast<T>(lr), decay = static_cast<T>(lr * weight_decay), eps_t = static_cast<T>(eps);
    for (Param<T>* p : params) {
      T* theta = p->value.ptr();
      T* m = p->m.ptr();
      T* v = p->v.ptr();
      const T* g = p->grad.ptr();
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        theta[i] -= decay * theta[i];
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        theta[i] -= lr_t * m_hat / (std::sqrt(v_hat) + eps_t);
      }
    }
  }

  template <class T>
  void step(const std::vector<Param<T>*>& params) {
    step(std::span<Param<T>* const>(params));
  }
};

template <class T>
double global_grad_norm(std::span<Param<T>* const> params) {
  double sq = 0.0;
  for (const Param<T>* p : params)
    for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied scale (1 when untouched).
template <class T>
double clip_grad_norm(std::span<Param<T>* const> params, double max_norm = 5.0) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (Param<T>* p : params)
    for (auto& g : p->grad.vec()) g = static_cast<T>(g * scale);
  return scale;
}

template <class T>
double clip_grad_norm(const std::vector<Param<T>*>& params, double max_norm = 5.0) {
  return clip_grad_norm(std::span<Param<T>* const>(params), max_norm);
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// validation losses that fail to beat the best by more than `threshold`.
struct PlateauScheduler {
  double lr = 3e-4;
  double factor = 0.5;
  int patience = 3;
  double threshold = 1e-4;
  double min_lr = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  double step(double val_loss) {
    if (val_loss < best - threshold) {
      best = val_loss;
      bad_epochs = 0;
    } else if (++bad_epochs >= patience) {
      lr = std::max(lr * factor, min_lr);
      bad_epochs = 0;
    }
    return lr;
  }
};

}  // namespace lrcw::nn
