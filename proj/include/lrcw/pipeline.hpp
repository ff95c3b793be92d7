#pragma once

// Sample loading and batch assembly.
//
// A PreparedSet holds every sample of a manifest in model-ready raw form:
// LiDAR and RADAR BEV grids already rasterized and resized, images resized
// to the backbone input. When RADAR augmentation is active the clouds are
// kept instead and rasterized per draw. Rasterized grids are cached as BEVT
// files under <data>/cache/<config hash>/.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "json.hpp"
#include "lrcw/augment.hpp"
#include "lrcw/bev_raster.hpp"
#include "lrcw/config.hpp"
#include "lrcw/model.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/sensor_io.hpp"

namespace lrcw {

/// Runs fn(i) for i in [0, n) on up to `workers` threads; the first
/// exception is rethrown. workers == 1 runs inline.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, n); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct NormStats {
  std::vector<float> lidar_mean{norm_stats::kLidarMean.begin(), norm_stats::kLidarMean.end()};
  std::vector<float> lidar_std{norm_stats::kLidarStd.begin(), norm_stats::kLidarStd.end()};
  std::vector<float> radar_mean{norm_stats::kRadarMean.begin(), norm_stats::kRadarMean.end()};
  std::vector<float> radar_std{norm_stats::kRadarStd.begin(), norm_stats::kRadarStd.end()};
  std::vector<float> camera_mean{norm_stats::kImageNetMean.begin(), norm_stats::kImageNetMean.end()};
  std::vector<float> camera_std{norm_stats::kImageNetStd.begin(), norm_stats::kImageNetStd.end()};

  bool operator==(const NormStats&) const = default;
};

inline nlohmann::json to_json(const NormStats& s) {
  return {{"lidar", {{"mean", s.lidar_mean}, {"std", s.lidar_std}}},
          {"radar", {{"mean", s.radar_mean}, {"std", s.radar_std}}},
          {"camera", {{"mean", s.camera_mean}, {"std", s.camera_std}}}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  try {
    s.lidar_mean = j.at("lidar").at("mean").get<std::vector<float>>();
    s.lidar_std = j.at("lidar").at("std").get<std::vector<float>>();
    s.radar_mean = j.at("radar").at("mean").get<std::vector<float>>();
    s.radar_std = j.at("radar").at("std").get<std::vector<float>>();
    s.camera_mean = j.at("camera").at("mean").get<std::vector<float>>();
    s.camera_std = j.at("camera").at("std").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("normalization statistics malformed: ") + e.what());
  }
  if (s.lidar_mean.size() != 1 || s.lidar_std.size() != 1 || s.radar_mean.size() != 2 || s.radar_std.size() != 2 ||
      s.camera_mean.size() != 3 || s.camera_std.size() != 3)
    throw DataError("normalization statistics have wrong channel counts");
  return s;
}

struct PreparedSample {
  std::string id;  // manifest-relative LiDAR path stem
  int label = 0;
  TensorF lidar;   // [1,S,S] raw intensity
  TensorF radar;   // [2,S,S] raw snr/rcs (empty when clouds are kept)
  RadarCloud radar_cloud;
  bool has_radar_cloud = false;
  TensorF image;   // [3,S,S] in [0,1]
};

struct PrepareOptions {
  FrustumSpec frustum;
  GridSpec grid;
  Variant variant = Variant::lrc_weathernet;
  bool keep_radar_clouds = false;
  bool cache = true;
  std::size_t workers = 1;
};

struct PreparedSet {
  std::vector<PreparedSample> samples;
  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }
};

/// Hex key identifying a rasterization configuration.
inline std::string raster_cache_key(const FrustumSpec& f, const GridSpec& g) {
  const nlohmann::json j = {{"frustum", {f.x_min, f.x_max, f.y_min, f.y_max}},
                            {"grid", {g.resolution, g.out_h, g.out_w}},
                            {"format", 1}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline std::string sample_id(const ManifestEntry& e) {
  std::string id = fs::path(e.lidar_path).replace_extension().string();
  for (auto& ch : id)
    if (ch == '/' || ch == '\\') ch = '_';
  return id;
}

inline TensorF raster_lidar(const LidarCloud& cloud, const FrustumSpec& f, const GridSpec& g) {
  return resize_bilinear(rasterize_lidar(cloud, f, g).tensor, g.out_h, g.out_w);
}

inline TensorF raster_radar(const RadarCloud& cloud, const FrustumSpec& f, const GridSpec& g) {
  return resize_bilinear(rasterize_radar(cloud, f, g).tensor, g.out_h, g.out_w);
}

namespace detail {

/// Loads the cached grid or rasterizes and (optionally) stores it.
template <class Make>
TensorF cached(const fs::path& dir, const std::string& name, bool use_cache, Make make) {
  if (use_cache) {
    const fs::path p = dir / name;
    std::error_code ec;
    if (fs::exists(p, ec)) {
      try {
        return read_tensor(p);
      } catch (const DataError&) {
        // stale or partial file: rebuild below
      }
    }
    TensorF t = make();
    const fs::path tmp = p.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    write_tensor(tmp, t);
    fs::rename(tmp, p, ec);
    return t;
  }
  return make();
}

}  // namespace detail

inline PreparedSet prepare(const Manifest& manifest, const PrepareOptions& opt) {
  const std::size_t s = opt.grid.out_h;
  const bool lidar = uses_lidar(opt.variant), radar = uses_radar(opt.variant), camera = uses_camera(opt.variant);
  const fs::path cache_dir = manifest.base_dir / "cache" / raster_cache_key(opt.frustum, opt.grid);
  const bool use_cache = opt.cache && !manifest.base_dir.empty();
  if (use_cache) fs::create_directories(cache_dir);

  PreparedSet out;
  out.samples.resize(manifest.entries.size());
  parallel_for(manifest.entries.size(), opt.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    auto& ps = out.samples[i];
    ps.id = sample_id(e);
    ps.label = e.label;
    if (lidar) {
      ps.lidar = detail::cached(cache_dir, ps.id + ".lidar.bevt", use_cache, [&] {
        return raster_lidar(read_point_cloud<LidarPoint>(manifest.resolve(e.lidar_path)), opt.frustum, opt.grid);
      });
    }
    if (radar) {
      if (opt.keep_radar_clouds) {
        ps.radar_cloud = read_point_cloud<RadarPoint>(manifest.resolve(e.radar_path));
        ps.has_radar_cloud = true;
      } else {
        ps.radar = detail::cached(cache_dir, ps.id + ".radar.bevt", use_cache, [&] {
          return raster_radar(read_point_cloud<RadarPoint>(manifest.resolve(e.radar_path)), opt.frustum, opt.grid);
        });
      }
    }
    if (camera) {
      TensorF img = read_ppm(manifest.resolve(e.image_path));
      ps.image = img.dim(1) == s && img.dim(2) == s ? std::move(img) : resize_bilinear(img, s, s);
    }
  });
  return out;
}

/// Per-channel mean/std of the raw (unaugmented) BEV grids, accumulated in
/// double. Camera statistics stay at the ImageNet constants.
inline NormStats compute_norm_stats(const PreparedSet& set, const FrustumSpec& f, const GridSpec& g) {
  NormStats st;
  const auto accumulate = [](const TensorF& t, std::size_t c, std::vector<double>& sum, std::vector<double>& sq,
                             std::vector<double>& n) {
    const std::size_t plane = t.size() / c;
    for (std::size_t k = 0; k < c; ++k) {
      const float* p = t.ptr() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[k] += p[i];
        sq[k] += static_cast<double>(p[i]) * p[i];
      }
      n[k] += static_cast<double>(plane);
    }
  };
  const auto finish = [](const std::vector<double>& sum, const std::vector<double>& sq, const std::vector<double>& n,
                         std::vector<float>& mean, std::vector<float>& stddev) {
    for (std::size_t k = 0; k < sum.size(); ++k) {
      if (n[k] == 0) continue;
      const double m = sum[k] / n[k];
      const double var = std::max(0.0, sq[k] / n[k] - m * m);
      mean[k] = static_cast<float>(m);
      stddev[k] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    }
  };
  std::vector<double> ls(1), lq(1), ln(1), rs(2), rq(2), rn(2);
  for (const auto& s : set.samples) {
    if (!s.lidar.empty()) accumulate(s.lidar, 1, ls, lq, ln);
    if (!s.radar.empty()) accumulate(s.radar, 2, rs, rq, rn);
    else if (s.has_radar_cloud) accumulate(raster_radar(s.radar_cloud, f, g), 2, rs, rq, rn);
  }
  finish(ls, lq, ln, st.lidar_mean, st.lidar_std);
  finish(rs, rq, rn, st.radar_mean, st.radar_std);
  return st;
}

struct Batch {
  TensorF primary;  // [B,C,S,S]
  TensorF camera;   // [B,3,S,S] for the gated variant, else empty
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

struct AssembleOptions {
  Variant variant = Variant::lrc_weathernet;
  std::size_t input_size = 224;
  const AugmentConfig* augment = nullptr;  // null: no augmentation
  FrustumSpec frustum;
  GridSpec grid;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::size_t workers = 1;
};

namespace detail {

inline void normalize_into(const float* src, float* dst, std::size_t channels, std::size_t plane,
                           std::span<const float> mean, std::span<const float> stddev) {
  for (std::size_t k = 0; k < channels; ++k)
    for (std::size_t i = 0; i < plane; ++i) dst[k * plane + i] = (src[k * plane + i] - mean[k]) / stddev[k];
}

}  // namespace detail

/// Builds one normalized batch. Augmentation draws come from a per-sample
/// stream keyed by (seed, epoch, sample index), so the result does not
/// depend on the worker count.
inline Batch assemble_batch(const PreparedSet& set, std::span<const std::size_t> indices, const NormStats& stats,
                            const AssembleOptions& opt) {
  const std::size_t b = indices.size(), s = opt.input_size, plane = s * s;
  const Variant v = opt.variant;
  Batch batch;
  batch.indices.assign(indices.begin(), indices.end());
  batch.labels.resize(b);
  batch.primary = TensorF({b, primary_channels(v), s, s});
  if (v == Variant::lrc_weathernet) batch.camera = TensorF({b, 3, s, s});
  const std::size_t pc = primary_channels(v);

  parallel_for(b, opt.workers, [&](std::size_t k) {
    const auto& ps = set.samples.at(indices[k]);
    batch.labels[k] = ps.label;
    Rng rng = make_rng(opt.seed, Stream::augment, {opt.epoch, indices[k]});

    TensorF image;
    if (uses_camera(v)) {
      image = opt.augment ? augment_camera(ps.image, opt.augment->camera, rng) : ps.image;
      if (image.dim(1) != s) throw ShapeError("image size does not match the model input");
    }
    TensorF radar;
    if (uses_radar(v)) {
      if (!ps.has_radar_cloud) {
        radar = ps.radar;
      } else {
        const RadarCloud cloud = opt.augment ? augment_radar(ps.radar_cloud, opt.augment->radar, rng) : ps.radar_cloud;
        radar = raster_radar(cloud, opt.frustum, opt.grid);
      }
    }

    float* prim = batch.primary.ptr() + k * pc * plane;
    switch (v) {
      case Variant::camera_only:
        detail::normalize_into(image.ptr(), prim, 3, plane, stats.camera_mean, stats.camera_std);
        break;
      case Variant::lidar_only:
        detail::normalize_into(ps.lidar.ptr(), prim, 1, plane, stats.lidar_mean, stats.lidar_std);
        break;
      case Variant::radar_only:
        detail::normalize_into(radar.ptr(), prim, 2, plane, stats.radar_mean, stats.radar_std);
        break;
      case Variant::early_fusion:
      case Variant::lrc_weathernet:
        detail::normalize_into(ps.lidar.ptr(), prim, 1, plane, stats.lidar_mean, stats.lidar_std);
        detail::normalize_into(radar.ptr(), prim + plane, 2, plane, stats.radar_mean, stats.radar_std);
        break;
    }
    if (v == Variant::lrc_weathernet)
      detail::normalize_into(image.ptr(), batch.camera.ptr() + k * 3 * plane, 3, plane, stats.camera_mean,
                             stats.camera_std);
  });
  return batch;
}

}  // namespace lrcw
