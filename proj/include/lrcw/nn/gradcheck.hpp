#pragma once

// Central finite-difference gradient checker (run in double precision).
//
// The loss callback re-runs the full forward pass and reports the loss plus a
// "kink signature" (the ReLU activation pattern). Central differences are only
// valid where that pattern is unchanged on both sides of the perturbation, so
// when a step crosses a kink it is halved and retried.
//
// Each estimate combines steps h and h/2 by Richardson extrapolation,
// (4 D(h/2) - D(h)) / 3, which cancels the O(h^2) truncation term. Batch norm
// over a few samples is curved enough that D(h) alone is off by ~1e-4.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lrcw/rng.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw::nn {

struct GradCheckOptions {
  double rel_step = 1e-3;     // h = rel_step * max(1, |theta|)
  int max_halvings = 12;
  std::size_t max_coords = 0;  // per tensor; 0 checks every element
  std::uint64_t seed = 0;      // coordinate sampling when max_coords > 0
  double abs_floor = 1e-6;     // denominator floor for tensors whose true gradient is ~0
};

struct GradTarget {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* analytic;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;  // max|a - n| / max(max|a|, max|n|, abs_floor)
  std::size_t checked = 0;
  std::size_t halved = 0;      // coordinates that needed a smaller step
  std::size_t skipped = 0;     // coordinates with a kink at every step size
};

using LossAndKinks = std::pair<double, std::vector<std::uint8_t>>;

template <class LossFn>
std::vector<GradCheckReport> check_gradients(const std::vector<GradTarget>& targets, LossFn&& loss,
                                             const GradCheckOptions& opts = {}) {
  const auto base_kinks = loss().second;
  std::vector<GradCheckReport> reports;
  Rng rng(opts.seed);
  for (const auto& target : targets) {
    GradCheckReport rep{target.name};
    Tensor<double>& value = *target.value;
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
    }
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t i : coords) {
      const double theta = value[i];
      double h = opts.rel_step * std::max(1.0, std::abs(theta));
      bool ok = false;
      double numeric = 0.0;
      for (int attempt = 0; attempt <= opts.max_halvings; ++attempt, h *= 0.5) {
        double d[2] = {0.0, 0.0};
        bool smooth = true;
        for (int k = 0; k < 2 && smooth; ++k) {
          const double step = k == 0 ? h : 0.5 * h;
          value[i] = theta + step;
          const auto plus = loss();
          value[i] = theta - step;
          const auto minus = loss();
          value[i] = theta;
          smooth = plus.second == base_kinks && minus.second == base_kinks;
          d[k] = (plus.first - minus.first) / (2.0 * step);
        }
        if (smooth) {
          numeric = (4.0 * d[1] - d[0]) / 3.0;
          ok = true;
          rep.halved += attempt > 0 ? 1 : 0;
          break;
        }
      }
      if (!ok) {
        ++rep.skipped;
        continue;
      }
      const double a = (*target.analytic)[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
      ++rep.checked;
    }
    rep.max_rel_error = max_diff / std::max(max_mag, opts.abs_floor);
    reports.push_back(std::move(rep));
  }
  loss();  // leave layer caches consistent with the unperturbed values
  return reports;
}

inline double worst_error(const std::vector<GradCheckReport>& reports) {
  double worst = 0.0;
  for (const auto& r : reports) worst = std::max(worst, r.max_rel_error);
  return worst;
}

}  // namespace lrcw::nn
