#pragma once

// Training-time augmentation for camera images and RADAR clouds.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lrcw/bev_raster.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

struct CameraAugmentSpec {
  bool enabled = true;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double rotation_deg = 45.0;  // angle ~ U(-r, r)
  double brightness = 0.2;     // factors ~ U(1-a, 1+a)
  double contrast = 0.2;
  double saturation = 0.2;
  double translate = 0.1;      // fraction of width/height
  double crop_scale_min = 0.8; // area fraction of the random resized crop
  double crop_scale_max = 1.0;

  void validate() const {
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(hflip_p) || !prob(vflip_p)) throw ConfigError("flip probabilities must lie in [0,1]");
    if (rotation_deg < 0 || brightness < 0 || contrast < 0 || saturation < 0 || translate < 0)
      throw ConfigError("augmentation amplitudes must be non-negative");
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
      throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }

  /// Every transform disabled (the pipeline is then the identity).
  static CameraAugmentSpec identity() { return {true, 0, 0, 0, 0, 0, 0, 0, 1, 1}; }
};

struct RadarAugmentSpec {
  bool enabled = true;
  double rotation_deg = 5.0;
  double noise_fraction = 0.02;  // noise std as a fraction of each field's range

  void validate() const {
    if (rotation_deg < 0 || noise_fraction < 0) throw ConfigError("radar augmentation amplitudes must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Camera

inline TensorF flip_horizontal(const TensorF& img) {
  TensorF out(img.shape());
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t k = 0; k < c * h; ++k)
    for (std::size_t x = 0; x < w; ++x) out[k * w + x] = img[k * w + (w - 1 - x)];
  return out;
}

inline TensorF flip_vertical(const TensorF& img) {
  TensorF out(img.shape());
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(img.ptr() + (k * h + (h - 1 - y)) * w, w, out.ptr() + (k * h + y) * w);
  return out;
}

/// Inverse-mapped bilinear warp about the image center with zero fill:
/// src = R(-angle) (dst - center) + center - shift.
inline TensorF warp_rigid(const TensorF& img, double angle_rad, double shift_x, double shift_y) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2), plane = h * w;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  const auto wl = static_cast<long>(w), hl = static_cast<long>(h);
  TensorF out(img.shape());
  const float* in = img.ptr();
  float* o = out.ptr();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx - shift_x, dy = static_cast<double>(y) - cy - shift_y;
      const double sx = cs * dx + sn * dy + cx, sy = -sn * dx + cs * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const auto ax = static_cast<float>(sx - fx), ay = static_cast<float>(sy - fy);
      const std::size_t dst = y * w + x;
      if (x0 < -1 || y0 < -1 || x0 >= wl || y0 >= hl) {
        for (std::size_t k = 0; k < c; ++k) o[k * plane + dst] = 0.0f;
        continue;
      }
      // Tap offsets; out-of-image taps read as zero.
      const bool in_x0 = x0 >= 0, in_x1 = x0 + 1 < wl, in_y0 = y0 >= 0, in_y1 = y0 + 1 < hl;
      const std::size_t base = static_cast<std::size_t>(std::max(y0, 0L)) * w + static_cast<std::size_t>(std::max(x0, 0L));
      for (std::size_t k = 0; k < c; ++k) {
        const float* p = in + k * plane;
        const float v00 = in_y0 && in_x0 ? p[base] : 0.0f;
        if (ax == 0.0f && ay == 0.0f) {
          o[k * plane + dst] = v00;
          continue;
        }
        const float v01 = in_y0 && in_x1 ? p[static_cast<std::size_t>(y0) * w + static_cast<std::size_t>(x0 + 1)] : 0.0f;
        const float v10 = in_y1 && in_x0 ? p[static_cast<std::size_t>(y0 + 1) * w + static_cast<std::size_t>(x0)] : 0.0f;
        const float v11 = in_y1 && in_x1 ? p[static_cast<std::size_t>(y0 + 1) * w + static_cast<std::size_t>(x0 + 1)] : 0.0f;
        o[k * plane + dst] = lerp_bounded(lerp_bounded(v00, v01, ax), lerp_bounded(v10, v11, ax), ay);
      }
    }
  return out;
}

/// Bilinear shift by (shift_x, shift_y) pixels with zero fill.
inline TensorF translate(const TensorF& img, double shift_x, double shift_y) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2), plane = h * w;
  const double fx = std::floor(-shift_x), fy = std::floor(-shift_y);
  const auto ox = static_cast<long>(fx), oy = static_cast<long>(fy);
  const auto ax = static_cast<float>(-shift_x - fx), ay = static_cast<float>(-shift_y - fy);
  const auto wl = static_cast<long>(w), hl = static_cast<long>(h);
  TensorF out(img.shape());
  std::vector<float> r0(w + 1), r1(w + 1);
  for (std::size_t k = 0; k < c; ++k) {
    const float* p = img.ptr() + k * plane;
    // Row taps, resampled horizontally: row(x) = lerp(src[x+ox], src[x+ox+1], ax).
    const auto hrow = [&](long sy, std::vector<float>& dst) {
      if (sy < 0 || sy >= hl) {
        std::fill(dst.begin(), dst.end(), 0.0f);
        return;
      }
      const float* row = p + static_cast<std::size_t>(sy) * w;
      const auto at = [&](long sx) { return sx >= 0 && sx < wl ? row[sx] : 0.0f; };
      const long lo = std::clamp(-ox, 0L, wl), hi = std::clamp(wl - 1 - ox, lo, wl);  // both taps inside
      for (long x = 0; x < lo; ++x) dst[static_cast<std::size_t>(x)] = lerp_bounded(at(x + ox), at(x + ox + 1), ax);
      for (long x = lo; x < hi; ++x) dst[static_cast<std::size_t>(x)] = lerp_bounded(row[x + ox], row[x + ox + 1], ax);
      for (long x = hi; x < wl; ++x) dst[static_cast<std::size_t>(x)] = lerp_bounded(at(x + ox), at(x + ox + 1), ax);
    };
    for (long y = 0; y < hl; ++y) {
      hrow(y + oy, r0);
      float* o = out.ptr() + k * plane + static_cast<std::size_t>(y) * w;
      if (ay == 0.0f) {
        std::copy_n(r0.begin(), w, o);
        continue;
      }
      hrow(y + oy + 1, r1);
      for (std::size_t x = 0; x < w; ++x) o[x] = lerp_bounded(r0[x], r1[x], ay);
    }
  }
  return out;
}

inline void clamp01(TensorF& img) {
  for (auto& v : img.vec()) v = std::clamp(v, 0.0f, 1.0f);
}

/// Multiplicative brightness, contrast (about the mean luminance) and
/// saturation (about per-pixel luminance). A factor of exactly 1 is a no-op.
inline void color_jitter(TensorF& img, double brightness, double contrast, double saturation) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  float* r = img.ptr();
  float* g = r + plane;
  float* b = g + plane;
  const auto luma = [&](std::size_t i) { return 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i]; };
  if (brightness != 1.0) {
    for (auto& v : img.vec()) v *= static_cast<float>(brightness);
    clamp01(img);
  }
  if (contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += luma(i);
    const auto m = static_cast<float>(mean / static_cast<double>(plane));
    for (auto& v : img.vec()) v = (v - m) * static_cast<float>(contrast) + m;
    clamp01(img);
  }
  if (saturation != 1.0) {
    const auto s = static_cast<float>(saturation);
    for (std::size_t i = 0; i < plane; ++i) {
      const float l = luma(i);
      r[i] = l + (r[i] - l) * s;
      g[i] = l + (g[i] - l) * s;
      b[i] = l + (b[i] - l) * s;
    }
    clamp01(img);
  }
}

/// Crops [top, top+ch) x [left, left+cw) and resizes back to the full size.
inline TensorF resized_crop(const TensorF& img, std::size_t top, std::size_t left, std::size_t ch, std::size_t cw) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (top == 0 && left == 0 && ch == h && cw == w) return img;
  TensorF crop({c, ch, cw});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < ch; ++y)
      std::copy_n(img.ptr() + (k * h + top + y) * w + left, cw, crop.ptr() + (k * ch + y) * cw);
  return resize_bilinear(crop, h, w);
}

/// flips -> rotation -> color jitter -> translation -> random resized crop.
inline TensorF augment_camera(const TensorF& image, const CameraAugmentSpec& spec, Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("augment_camera expects [3,H,W]");
  if (!spec.enabled) return image;
  const std::size_t h = image.dim(1), w = image.dim(2);
  TensorF img = image;
  if (uniform01(rng) < spec.hflip_p) img = flip_horizontal(img);
  if (uniform01(rng) < spec.vflip_p) img = flip_vertical(img);

  const double angle = uniform(rng, -spec.rotation_deg, spec.rotation_deg) * std::numbers::pi / 180.0;
  if (angle != 0.0) img = warp_rigid(img, angle, 0.0, 0.0);

  color_jitter(img, uniform(rng, 1.0 - spec.brightness, 1.0 + spec.brightness),
               uniform(rng, 1.0 - spec.contrast, 1.0 + spec.contrast),
               uniform(rng, 1.0 - spec.saturation, 1.0 + spec.saturation));

  const double tx = uniform(rng, -spec.translate, spec.translate) * static_cast<double>(w);
  const double ty = uniform(rng, -spec.translate, spec.translate) * static_cast<double>(h);
  if (tx != 0.0 || ty != 0.0) img = translate(img, tx, ty);

  const double side = std::sqrt(uniform(rng, spec.crop_scale_min, spec.crop_scale_max));
  const auto ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(h))), 1, h);
  const auto cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(w))), 1, w);
  const auto top = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(h - ch + 1));
  const auto left = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(w - cw + 1));
  img = resized_crop(img, std::min(top, h - ch), std::min(left, w - cw), ch, cw);
  clamp01(img);
  return img;
}

// ---------------------------------------------------------------------------
// RADAR

/// Rotates (x, y) about the sensor origin; z and attributes unchanged.
inline RadarCloud rotate_xy(const RadarCloud& cloud, double angle_rad) {
  const double cs = std::cos(angle_rad), sn = std::sin(angle_rad);
  RadarCloud out = cloud;
  for (auto& p : out) {
    const double x = p.x, y = p.y;
    p.x = static_cast<float>(cs * x - sn * y);
    p.y = static_cast<float>(sn * x + cs * y);
  }
  return out;
}

/// Gaussian noise on snr and rcs with std = fraction * (max - min) of each
/// field over the cloud.
inline RadarCloud add_radar_noise(const RadarCloud& cloud, double fraction, Rng& rng) {
  if (cloud.empty() || fraction == 0.0) return cloud;
  const auto [snr_lo, snr_hi] = std::minmax_element(cloud.begin(), cloud.end(),
                                                    [](const auto& a, const auto& b) { return a.snr < b.snr; });
  const auto [rcs_lo, rcs_hi] = std::minmax_element(cloud.begin(), cloud.end(),
                                                    [](const auto& a, const auto& b) { return a.rcs < b.rcs; });
  const double snr_std = fraction * (static_cast<double>(snr_hi->snr) - snr_lo->snr);
  const double rcs_std = fraction * (static_cast<double>(rcs_hi->rcs) - rcs_lo->rcs);
  RadarCloud out = cloud;
  for (auto& p : out) {
    if (snr_std > 0.0) p.snr = static_cast<float>(p.snr + normal(rng, 0.0, snr_std));
    if (rcs_std > 0.0) p.rcs = static_cast<float>(p.rcs + normal(rng, 0.0, rcs_std));
  }
  return out;
}

inline RadarCloud augment_radar(const RadarCloud& cloud, const RadarAugmentSpec& spec, Rng& rng) {
  if (!spec.enabled) return cloud;
  const double angle = uniform(rng, -spec.rotation_deg, spec.rotation_deg) * std::numbers::pi / 180.0;
  RadarCloud out = angle != 0.0 ? rotate_xy(cloud, angle) : cloud;
  return add_radar_noise(out, spec.noise_fraction, rng);
}

}  // namespace lrcw
