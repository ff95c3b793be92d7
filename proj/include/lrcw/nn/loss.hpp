#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw::nn {

template <class T>
struct LossResult {
  T loss{};
  Tensor<T> grad;  // dloss/dlogits, same shape as logits
};

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [B,K]");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const T* z = logits.ptr() + i * k;
    const T mx = *std::max_element(z, z + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += (p[i * k + j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

/// Class-weighted cross entropy reduced by the weighted mean:
///   loss = sum_i w[y_i] * -log softmax(z_i)[y_i] / sum_i w[y_i]
template <class T>
LossResult<T> weighted_softmax_ce(const Tensor<T>& logits, std::span<const int> targets, std::span<const T> weights) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw ShapeError("weighted_softmax_ce: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (weights.size() != k) throw ShapeError("weighted_softmax_ce: need one weight per class");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= k) throw DataError("invalid target class " + std::to_string(t));

  LossResult<T> out{T{0}, Tensor<T>(logits.shape())};
  T weight_sum{0};
  for (int t : targets) weight_sum += weights[static_cast<std::size_t>(t)];
  T total{0};
  for (std::size_t i = 0; i < b; ++i) {
    const T* z = logits.ptr() + i * k;
    const auto y = static_cast<std::size_t>(targets[i]);
    const T mx = *std::max_element(z, z + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const T log_sum = std::log(sum);
    const T w = weights[y];
    total += -w * (z[y] - mx - log_sum);
    for (std::size_t j = 0; j < k; ++j) {
      const T p = std::exp(z[j] - mx - log_sum);
      out.grad[i * k + j] = w * (p - (j == y ? T{1} : T{0})) / weight_sum;
    }
  }
  out.loss = total / weight_sum;
  return out;
}

inline constexpr double kClassWeightMin = 0.25;
inline constexpr double kClassWeightMax = 4.0;

/// Inverse-frequency weights N / (K * n_c), clamped; empty classes get the max.
inline std::vector<float> compute_class_weights(std::span<const std::int64_t> counts) {
  std::int64_t total = 0;
  for (auto c : counts) {
    if (c < 0) throw DataError("class counts must be non-negative");
    total += c;
  }
  if (total == 0) throw DataError("class weights need at least one labelled sample");
  const double k = static_cast<double>(counts.size());
  std::vector<float> w(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double raw = counts[i] == 0 ? kClassWeightMax : static_cast<double>(total) / (k * counts[i]);
    w[i] = static_cast<float>(std::clamp(raw, kClassWeightMin, kClassWeightMax));
  }
  return w;
}

}  // namespace lrcw::nn
