#pragma once

// Bird's-eye-view rasterization of LiDAR and RADAR clouds.
//
// Grid rows index the forward axis (x), columns the lateral axis (y). The
// frustum is half-open on both axes: x_min <= x < x_max, y_min <= y < y_max.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrcw/error.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

struct FrustumSpec {
  double x_min = 0.0;
  double x_max = 50.0;
  double y_min = -25.0;
  double y_max = 25.0;

  void validate() const {
    if (!(x_min < x_max) || !(y_min < y_max)) throw ConfigError("frustum bounds must satisfy min < max");
  }
  bool contains(double x, double y) const { return x >= x_min && x < x_max && y >= y_min && y < y_max; }
};

struct GridSpec {
  double resolution = 0.1;
  std::size_t out_h = 224;
  std::size_t out_w = 224;

  void validate(const FrustumSpec& f) const {
    if (!(resolution > 0.0)) throw ConfigError("grid resolution must be positive");
    if (out_h == 0 || out_w == 0) throw ConfigError("output grid dims must be >= 1");
    if (raw_h(f) == 0 || raw_w(f) == 0) throw ConfigError("raw grid dims must be >= 1");
  }
  // The 1e-9 slack keeps spans like 50 / 0.1 from rounding up to 501.
  std::size_t raw_h(const FrustumSpec& f) const {
    return static_cast<std::size_t>(std::ceil((f.x_max - f.x_min) / resolution - 1e-9));
  }
  std::size_t raw_w(const FrustumSpec& f) const {
    return static_cast<std::size_t>(std::ceil((f.y_max - f.y_min) / resolution - 1e-9));
  }
};

struct BevGrid {
  TensorF tensor;  // [C,H,W]
  FrustumSpec frustum;
  GridSpec grid;
  std::vector<std::string> channels;
};

inline const std::vector<std::string> kLidarChannels = {"lidar_intensity"};
inline const std::vector<std::string> kRadarChannels = {"radar_snr", "radar_rcs"};
inline const std::vector<std::string> kFusedChannels = {"lidar_intensity", "radar_snr", "radar_rcs"};

template <class Point>
std::vector<Point> frustum_filter(std::span<const Point> cloud, const FrustumSpec& f) {
  std::vector<Point> out;
  for (const auto& p : cloud)
    if (f.contains(p.x, p.y)) out.push_back(p);
  return out;
}

template <class Point>
std::vector<Point> frustum_filter(const std::vector<Point>& cloud, const FrustumSpec& f) {
  return frustum_filter(std::span<const Point>(cloud), f);
}

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Grid cell of an in-frustum point, clamped to the raw grid.
inline Cell cell_of(double x, double y, const FrustumSpec& f, const GridSpec& g) {
  const auto clamp_index = [](double v, std::size_t n) {
    const double fl = std::floor(v);
    if (fl < 0.0) return std::size_t{0};
    if (fl > static_cast<double>(n - 1)) return n - 1;
    return static_cast<std::size_t>(fl);
  };
  return {clamp_index((x - f.x_min) / g.resolution, g.raw_h(f)), clamp_index((y - f.y_min) / g.resolution, g.raw_w(f))};
}

namespace detail {

/// Max-reduces per-point values into [C,H0,W0]. Empty cells stay 0 even when
/// every value landing elsewhere is negative.
template <class Point, std::size_t C, class Extract>
TensorF max_raster(std::span<const Point> cloud, const FrustumSpec& f, const GridSpec& g, Extract extract) {
  f.validate();
  g.validate(f);
  const std::size_t h = g.raw_h(f), w = g.raw_w(f), plane = h * w;
  TensorF out({C, h, w});
  std::vector<unsigned char> occupied(plane, 0);
  float* data = out.ptr();
  for (const auto& p : cloud) {
    if (!f.contains(p.x, p.y)) continue;
    const Cell c = cell_of(p.x, p.y, f, g);
    const std::size_t idx = c.row * w + c.col;
    const std::array<float, C> v = extract(p);
    if (!occupied[idx]) {
      occupied[idx] = 1;
      for (std::size_t k = 0; k < C; ++k) data[k * plane + idx] = v[k];
    } else {
      for (std::size_t k = 0; k < C; ++k) data[k * plane + idx] = std::max(data[k * plane + idx], v[k]);
    }
  }
  return out;
}

}  // namespace detail

inline BevGrid rasterize_lidar(std::span<const LidarPoint> cloud, const FrustumSpec& f = {}, const GridSpec& g = {}) {
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud[i].intensity < 0.0f) throw DataError("negative LiDAR intensity at point " + std::to_string(i));
  auto t = detail::max_raster<LidarPoint, 1>(cloud, f, g,
                                             [](const LidarPoint& p) { return std::array<float, 1>{p.intensity}; });
  return {std::move(t), f, g, kLidarChannels};
}

inline BevGrid rasterize_radar(std::span<const RadarPoint> cloud, const FrustumSpec& f = {}, const GridSpec& g = {}) {
  auto t = detail::max_raster<RadarPoint, 2>(cloud, f, g,
                                             [](const RadarPoint& p) { return std::array<float, 2>{p.snr, p.rcs}; });
  return {std::move(t), f, g, kRadarChannels};
}

/// a + t (b - a), clamped to [min(a,b), max(a,b)] so rounding never leaves
/// the input range. t == 0 returns a exactly.
inline float lerp_bounded(float a, float b, float t) {
  const float r = a + t * (b - a);
  return std::clamp(r, std::min(a, b), std::max(a, b));
}

/// Half-pixel-center bilinear resize of a [C,H0,W0] tensor with edge clamping.
inline TensorF resize_bilinear(const TensorF& src, std::size_t out_h, std::size_t out_w) {
  if (src.rank() != 3) throw ShapeError("resize_bilinear expects [C,H,W], got " + shape_str(src.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be >= 1x1");
  const std::size_t c = src.dim(0), h0 = src.dim(1), w0 = src.dim(2);

  struct Tap {
    std::size_t i0, i1;
    float frac;
  };
  const auto taps = [](std::size_t n_out, std::size_t n_in) {
    std::vector<Tap> t(n_out);
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t d = 0; d < n_out; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, n_in - 1), static_cast<float>(s - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(out_h, h0);
  const auto tx = taps(out_w, w0);

  TensorF out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k) {
    const float* in = src.ptr() + k * h0 * w0;
    float* o = out.ptr() + k * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const float* r0 = in + ty[y].i0 * w0;
      const float* r1 = in + ty[y].i1 * w0;
      for (std::size_t x = 0; x < out_w; ++x) {
        const float top = lerp_bounded(r0[tx[x].i0], r0[tx[x].i1], tx[x].frac);
        const float bot = lerp_bounded(r1[tx[x].i0], r1[tx[x].i1], tx[x].frac);
        o[y * out_w + x] = lerp_bounded(top, bot, ty[y].frac);
      }
    }
  }
  return out;
}

/// Per-channel standardization of a [C,...] tensor.
inline TensorF normalize(const TensorF& src, std::span<const float> mean, std::span<const float> stddev) {
  if (src.rank() < 1) throw ShapeError("normalize needs a channel axis");
  const std::size_t c = src.dim(0);
  if (mean.size() != c || stddev.size() != c)
    throw ShapeError("normalize: " + std::to_string(c) + " channels but " + std::to_string(mean.size()) + " means / " +
                     std::to_string(stddev.size()) + " stds");
  for (float s : stddev)
    if (!(s > 0.0f)) throw ConfigError("normalize: std must be positive");
  TensorF out = src;
  const std::size_t plane = src.size() / c;
  for (std::size_t k = 0; k < c; ++k) {
    float* p = out.ptr() + k * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean[k]) / stddev[k];
  }
  return out;
}

/// Dataset statistics for the BEV model inputs.
namespace norm_stats {
inline constexpr std::array<float, 1> kLidarMean = {0.0471f};
inline constexpr std::array<float, 1> kLidarStd = {0.1659f};
inline constexpr std::array<float, 2> kRadarMean = {0.0072f, 0.0040f};
inline constexpr std::array<float, 2> kRadarStd = {0.2507f, 0.2326f};
inline constexpr std::array<float, 3> kImageNetMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageNetStd = {0.229f, 0.224f, 0.225f};
}  // namespace norm_stats

/// Stacks LiDAR [1,H,W] and RADAR [2,H,W] into [3,H,W] (intensity, snr, rcs).
inline TensorF early_fuse(const TensorF& lidar, const TensorF& radar) {
  if (lidar.rank() != 3 || lidar.dim(0) != 1) throw ShapeError("early_fuse: LiDAR must be [1,H,W]");
  if (radar.rank() != 3 || radar.dim(0) != 2) throw ShapeError("early_fuse: RADAR must be [2,H,W]");
  if (lidar.dim(1) != radar.dim(1) || lidar.dim(2) != radar.dim(2))
    throw ShapeError("early_fuse: spatial dims differ " + shape_str(lidar.shape()) + " vs " + shape_str(radar.shape()));
  std::vector<float> data;
  data.reserve(lidar.size() + radar.size());
  data.insert(data.end(), lidar.vec().begin(), lidar.vec().end());
  data.insert(data.end(), radar.vec().begin(), radar.vec().end());
  return TensorF({3, lidar.dim(1), lidar.dim(2)}, std::move(data));
}

/// Channels [begin, begin+count) of a [C,H,W] tensor.
inline TensorF channel_slice(const TensorF& t, std::size_t begin, std::size_t count) {
  if (t.rank() != 3 || begin + count > t.dim(0)) throw ShapeError("channel_slice out of range");
  const std::size_t plane = t.dim(1) * t.dim(2);
  std::vector<float> data(t.ptr() + begin * plane, t.ptr() + (begin + count) * plane);
  return TensorF({count, t.dim(1), t.dim(2)}, std::move(data));
}

// ---------------------------------------------------------------------------
// Pillar encoding

/// Per-point pillar features: x y z intensity, offsets from the pillar mean
/// (dx dy dz), offsets from the pillar's x-y center (xc yc).
using PillarFeature = std::array<float, 9>;

struct Pillar {
  Cell cell;
  std::vector<PillarFeature> points;
};

inline std::vector<Pillar> encode_pillars(std::span<const LidarPoint> cloud, const FrustumSpec& f = {},
                                          const GridSpec& g = {}) {
  f.validate();
  g.validate(f);
  std::map<Cell, std::vector<LidarPoint>> groups;
  for (const auto& p : cloud)
    if (f.contains(p.x, p.y)) groups[cell_of(p.x, p.y, f, g)].push_back(p);

  std::vector<Pillar> pillars;
  pillars.reserve(groups.size());
  for (const auto& [cell, pts] : groups) {
    double mx = 0, my = 0, mz = 0;
    for (const auto& p : pts) {
      mx += p.x;
      my += p.y;
      mz += p.z;
    }
    const double n = static_cast<double>(pts.size());
    mx /= n;
    my /= n;
    mz /= n;
    const double cx = (static_cast<double>(cell.row) + 0.5) * g.resolution + f.x_min;
    const double cy = (static_cast<double>(cell.col) + 0.5) * g.resolution + f.y_min;
    Pillar pillar{cell, {}};
    pillar.points.reserve(pts.size());
    for (const auto& p : pts) {
      pillar.points.push_back({p.x, p.y, p.z, p.intensity, static_cast<float>(p.x - mx), static_cast<float>(p.y - my),
                               static_cast<float>(p.z - mz), static_cast<float>(p.x - cx),
                               static_cast<float>(p.y - cy)});
    }
    pillars.push_back(std::move(pillar));
  }
  return pillars;
}

}  // namespace lrcw
