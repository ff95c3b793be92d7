#pragma once

// Deterministic synthetic 9-class scene generator.
//
// Each class draws a LiDAR cloud, a RADAR cloud and an RGB image from its
// ClassProfile. Profiles are arranged so that no single sensor separates all
// classes: some pairs share one modality's distribution exactly and differ
// only in another. The shipped table lives in config/profiles.json and is
// mirrored by default_profiles().

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrcw/error.hpp"
#include "lrcw/rng.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct Gaussian {
  double mean = 0.0;
  double std = 0.0;
  bool operator==(const Gaussian&) const = default;
};

struct LidarProfile {
  Range count;          // points per cloud, inclusive integer range
  Gaussian intensity;   // clamped to >= 0
  double extent_m = 45; // forward reach of the scene
  bool operator==(const LidarProfile&) const = default;
};

struct RadarProfile {
  Range count;
  Gaussian snr;  // dB
  Gaussian rcs;  // dBsm
  bool operator==(const RadarProfile&) const = default;
};

struct ImageProfile {
  double hue_deg = 0.0;
  double saturation = 0.8;
  double brightness = 0.7;
  double texture_contrast = 0.05;  // std of per-pixel luminance noise
  bool operator==(const ImageProfile&) const = default;
};

/// With probability `probability`, a sample borrows the image profile of
/// class `source` instead of its own.
struct ImageAlias {
  int source = 0;
  double probability = 0.0;
  bool operator==(const ImageAlias&) const = default;
};

enum class Informative { camera, geometry, both };

struct ClassProfile {
  int class_id = 0;
  std::string name;
  Informative informative = Informative::both;
  LidarProfile lidar;
  RadarProfile radar;
  ImageProfile image;
  std::optional<ImageAlias> image_alias;

  bool operator==(const ClassProfile&) const = default;
};

struct SynthOptions {
  std::size_t image_size = 224;
  std::int64_t t0_us = 1'700'000'000'000'000;
  std::int64_t frame_period_us = 100'000;
  std::int64_t max_skew_us = 5'000;  // well inside the sync tolerance
};

struct SampleTriplet {
  LidarCloud lidar;
  RadarCloud radar;
  TensorF image;  // [3,S,S] in [0,1]
  int label = 0;
  std::int64_t t_lidar = 0, t_radar = 0, t_camera = 0;
};

// ---------------------------------------------------------------------------
// Profiles

inline std::string_view to_string(Informative i) {
  switch (i) {
    case Informative::camera: return "camera";
    case Informative::geometry: return "geometry";
    case Informative::both: return "both";
  }
  return "both";
}

inline Informative parse_informative(std::string_view s) {
  if (s == "camera") return Informative::camera;
  if (s == "geometry") return Informative::geometry;
  if (s == "both") return Informative::both;
  throw ConfigError("informative must be camera|geometry|both, got '" + std::string(s) + "'");
}

inline void validate_profile(const ClassProfile& p) {
  const std::string who = "profile " + std::to_string(p.class_id) + ": ";
  const auto count_ok = [](const Range& r) { return r.lo >= 1 && r.hi >= r.lo && std::floor(r.lo) == r.lo && std::floor(r.hi) == r.hi; };
  if (p.class_id < 0 || p.class_id >= kNumClasses) throw ConfigError(who + "class id out of range");
  if (!count_ok(p.lidar.count) || !count_ok(p.radar.count)) throw ConfigError(who + "count ranges must be positive integers");
  if (p.lidar.intensity.std < 0 || p.radar.snr.std < 0 || p.radar.rcs.std < 0 || p.image.texture_contrast < 0)
    throw ConfigError(who + "standard deviations must be >= 0");
  if (!(p.lidar.extent_m > 1.0)) throw ConfigError(who + "lidar extent must exceed 1 m");
  if (p.image.saturation < 0 || p.image.saturation > 1 || p.image.brightness < 0 || p.image.brightness > 1)
    throw ConfigError(who + "image saturation/brightness must lie in [0,1]");
  if (p.image_alias) {
    if (p.image_alias->source < 0 || p.image_alias->source >= kNumClasses || p.image_alias->source == p.class_id)
      throw ConfigError(who + "image alias source invalid");
    if (p.image_alias->probability < 0 || p.image_alias->probability > 1)
      throw ConfigError(who + "image alias probability must lie in [0,1]");
  }
}

inline void validate_profiles(const std::vector<ClassProfile>& profiles) {
  if (profiles.size() != kNumClasses) throw ConfigError("expected 9 class profiles, got " + std::to_string(profiles.size()));
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    validate_profile(profiles[i]);
    if (profiles[i].class_id != static_cast<int>(i)) throw ConfigError("profiles must be ordered by class id");
  }
}

namespace detail {

template <class T>
T take(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline Range range_from(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Gaussian gaussian_from(const nlohmann::json& j, const std::string& where) {
  reject_unknown(j, {"mean", "std"}, where);
  return {take<double>(j, "mean", where), take<double>(j, "std", where)};
}

}  // namespace detail

inline nlohmann::json to_json(const ClassProfile& p) {
  nlohmann::json j = {
      {"class_id", p.class_id},
      {"name", p.name},
      {"informative", to_string(p.informative)},
      {"lidar",
       {{"count", {p.lidar.count.lo, p.lidar.count.hi}},
        {"intensity", {{"mean", p.lidar.intensity.mean}, {"std", p.lidar.intensity.std}}},
        {"extent_m", p.lidar.extent_m}}},
      {"radar",
       {{"count", {p.radar.count.lo, p.radar.count.hi}},
        {"snr", {{"mean", p.radar.snr.mean}, {"std", p.radar.snr.std}}},
        {"rcs", {{"mean", p.radar.rcs.mean}, {"std", p.radar.rcs.std}}}}},
      {"image",
       {{"hue_deg", p.image.hue_deg},
        {"saturation", p.image.saturation},
        {"brightness", p.image.brightness},
        {"texture_contrast", p.image.texture_contrast}}}};
  if (p.image_alias) j["image_alias"] = {{"source", p.image_alias->source}, {"probability", p.image_alias->probability}};
  return j;
}

inline ClassProfile profile_from_json(const nlohmann::json& j) {
  using detail::take;
  const std::string where = "profile";
  detail::reject_unknown(j, {"class_id", "name", "informative", "lidar", "radar", "image", "image_alias", "note"}, where);
  ClassProfile p;
  p.class_id = take<int>(j, "class_id", where);
  const std::string w = where + "[" + std::to_string(p.class_id) + "]";
  p.name = j.value("name", std::string{});
  p.informative = parse_informative(take<std::string>(j, "informative", w));

  const auto& l = j.at("lidar");
  detail::reject_unknown(l, {"count", "intensity", "extent_m"}, w + ".lidar");
  p.lidar.count = detail::range_from(l.at("count"), w + ".lidar.count");
  p.lidar.intensity = detail::gaussian_from(l.at("intensity"), w + ".lidar.intensity");
  p.lidar.extent_m = take<double>(l, "extent_m", w + ".lidar");

  const auto& r = j.at("radar");
  detail::reject_unknown(r, {"count", "snr", "rcs"}, w + ".radar");
  p.radar.count = detail::range_from(r.at("count"), w + ".radar.count");
  p.radar.snr = detail::gaussian_from(r.at("snr"), w + ".radar.snr");
  p.radar.rcs = detail::gaussian_from(r.at("rcs"), w + ".radar.rcs");

  const auto& im = j.at("image");
  detail::reject_unknown(im, {"hue_deg", "saturation", "brightness", "texture_contrast"}, w + ".image");
  p.image = {take<double>(im, "hue_deg", w), take<double>(im, "saturation", w), take<double>(im, "brightness", w),
             take<double>(im, "texture_contrast", w)};

  if (j.contains("image_alias")) {
    const auto& a = j.at("image_alias");
    detail::reject_unknown(a, {"source", "probability"}, w + ".image_alias");
    p.image_alias = ImageAlias{take<int>(a, "source", w), take<double>(a, "probability", w)};
  }
  validate_profile(p);
  return p;
}

inline std::vector<ClassProfile> profiles_from_json(const nlohmann::json& j) {
  const auto& arr = j.is_object() && j.contains("classes") ? j.at("classes") : j;
  if (!arr.is_array()) throw ConfigError("profiles document must be an array or {\"classes\": [...]}");
  std::vector<ClassProfile> out;
  for (const auto& item : arr) out.push_back(profile_from_json(item));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
  validate_profiles(out);
  return out;
}

inline std::vector<ClassProfile> read_profiles(const fs::path& path) {
  try {
    return profiles_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// The built-in table; identical to config/profiles.json.
///
/// LiDAR groups: {0,1} {7,8} {5,6} share clouds; 2, 3, 4 are unique.
/// Camera groups: {3,4} {5,6} share images; class 2 borrows class 0's look
/// 75% of the time. RADAR separates only 5 and 6 from the rest.
inline std::vector<ClassProfile> default_profiles() {
  const RadarProfile radar_default{{150, 250}, {15, 3}, {5, 3}};
  const auto lidar = [](double lo, double hi, double mean, double extent) {
    return LidarProfile{{lo, hi}, {mean, 0.03}, extent};
  };
  const LidarProfile g01 = lidar(1800, 2200, 0.10, 45);
  const LidarProfile g78 = lidar(2700, 3300, 0.90, 45);
  const LidarProfile g56 = lidar(2700, 3300, 0.55, 45);
  const ImageProfile cyan{180, 0.7, 0.7, 0.05};
  const ImageProfile magenta{300, 0.7, 0.7, 0.05};

  std::vector<ClassProfile> p(kNumClasses);
  p[0] = {0, "clear", Informative::camera, g01, radar_default, {0, 0.75, 0.75, 0.05}, std::nullopt};
  p[1] = {1, "overcast", Informative::camera, g01, radar_default, {120, 0.75, 0.75, 0.05}, std::nullopt};
  p[2] = {2, "snow", Informative::geometry, lidar(7000, 8000, 0.25, 45), radar_default, {0, 0.0, 0.8, 0.20},
          ImageAlias{0, 0.75}};
  p[3] = {3, "light_fog", Informative::geometry, lidar(1200, 1500, 0.40, 20), radar_default, cyan, std::nullopt};
  p[4] = {4, "dense_fog", Informative::geometry, lidar(5000, 6000, 0.70, 20), radar_default, cyan, std::nullopt};
  p[5] = {5, "light_rain", Informative::geometry, g56, {{150, 250}, {28, 3}, {12, 3}}, magenta, std::nullopt};
  p[6] = {6, "heavy_rain", Informative::geometry, g56, {{150, 250}, {6, 3}, {-5, 3}}, magenta, std::nullopt};
  p[7] = {7, "dusk", Informative::camera, g78, radar_default, {240, 0.75, 0.75, 0.05}, std::nullopt};
  p[8] = {8, "glare", Informative::camera, g78, radar_default, {60, 0.75, 0.75, 0.05}, std::nullopt};
  return p;
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline std::size_t draw_count(Rng& rng, const Range& r) {
  const auto lo = static_cast<std::uint64_t>(r.lo), hi = static_cast<std::uint64_t>(r.hi);
  return static_cast<std::size_t>(lo + static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(hi - lo + 1)));
}

inline std::array<float, 3> hsv_to_rgb(double h_deg, double s, double v) {
  const double h = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

inline LidarCloud synth_lidar(const LidarProfile& p, Rng& rng) {
  LidarCloud cloud(draw_count(rng, p.count));
  for (auto& pt : cloud) {
    pt.x = static_cast<float>(uniform(rng, 0.5, p.extent_m));
    pt.y = static_cast<float>(uniform(rng, -20.0, 20.0));
    pt.z = static_cast<float>(normal(rng, -1.0, 0.5));
    pt.intensity = static_cast<float>(std::max(0.0, normal(rng, p.intensity.mean, p.intensity.std)));
  }
  return cloud;
}

inline RadarCloud synth_radar(const RadarProfile& p, Rng& rng) {
  RadarCloud cloud(draw_count(rng, p.count));
  for (auto& pt : cloud) {
    pt.x = static_cast<float>(uniform(rng, 2.0, 48.0));
    pt.y = static_cast<float>(uniform(rng, -20.0, 20.0));
    pt.z = static_cast<float>(normal(rng, 0.5, 0.5));
    pt.snr = static_cast<float>(normal(rng, p.snr.mean, p.snr.std));
    pt.rcs = static_cast<float>(normal(rng, p.rcs.mean, p.rcs.std));
  }
  return cloud;
}

/// Flat-colored scene with a vertical light falloff and per-pixel noise.
inline TensorF synth_image(const ImageProfile& p, std::size_t size, Rng& rng) {
  const double hue = p.hue_deg + uniform(rng, -8.0, 8.0);
  const double sat = p.saturation * uniform(rng, 0.85, 1.0);
  const double val = std::clamp(p.brightness * uniform(rng, 0.85, 1.15), 0.0, 1.0);
  const auto base = hsv_to_rgb(hue, sat, val);
  TensorF img({3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    const double shade = 1.1 - 0.3 * static_cast<double>(y) / static_cast<double>(size);
    for (std::size_t x = 0; x < size; ++x) {
      const double n = p.texture_contrast > 0 ? normal(rng, 0.0, p.texture_contrast) : 0.0;
      for (std::size_t c = 0; c < 3; ++c)
        img[c * plane + y * size + x] = static_cast<float>(std::clamp(base[c] * shade + n, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace detail

/// Sample `index` of class `label`; depends only on (profiles, label, index, seed).
inline SampleTriplet generate_sample(const std::vector<ClassProfile>& profiles, int label, std::size_t index,
                                     std::uint64_t seed, const SynthOptions& opt = {}) {
  const auto& p = profiles.at(static_cast<std::size_t>(label));
  const auto id = static_cast<std::uint64_t>(label);
  Rng lidar_rng = make_rng(seed, Stream::synth, {id, index, 0});
  Rng radar_rng = make_rng(seed, Stream::synth, {id, index, 1});
  Rng image_rng = make_rng(seed, Stream::synth, {id, index, 2});

  SampleTriplet s;
  s.label = label;
  s.lidar = detail::synth_lidar(p.lidar, lidar_rng);
  s.radar = detail::synth_radar(p.radar, radar_rng);
  const ImageProfile* look = &p.image;
  if (p.image_alias && uniform01(image_rng) < p.image_alias->probability)
    look = &profiles.at(static_cast<std::size_t>(p.image_alias->source)).image;
  s.image = detail::synth_image(*look, opt.image_size, image_rng);

  const auto frame = static_cast<std::int64_t>(index) * kNumClasses + label;
  s.t_lidar = opt.t0_us + frame * opt.frame_period_us;
  s.t_radar = s.t_lidar + static_cast<std::int64_t>(uniform01(radar_rng) * static_cast<double>(opt.max_skew_us));
  s.t_camera = s.t_lidar + static_cast<std::int64_t>(uniform01(image_rng) * static_cast<double>(opt.max_skew_us));
  return s;
}

/// n_per_class samples of every class, interleaved as 0..8, 0..8, ...
inline std::vector<SampleTriplet> generate_dataset(const std::vector<ClassProfile>& profiles, std::size_t n_per_class,
                                                   std::uint64_t seed, const SynthOptions& opt = {}) {
  validate_profiles(profiles);
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  std::vector<SampleTriplet> out;
  out.reserve(n_per_class * kNumClasses);
  for (std::size_t i = 0; i < n_per_class; ++i)
    for (int c = 0; c < kNumClasses; ++c) out.push_back(generate_sample(profiles, c, i, seed, opt));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const {
    if (train <= 0 || val < 0 || test < 0 || std::fabs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split fractions must be non-negative, train > 0, and sum to 1");
  }
};

struct WrittenDataset {
  Manifest all, train, val, test;
};

/// Stratified split: each class's sample indices are shuffled with the split
/// stream and cut at the requested fractions (rounded to nearest).
inline std::array<std::vector<std::size_t>, 3> stratified_split(const std::vector<int>& labels, const SplitFractions& f,
                                                                std::uint64_t seed) {
  f.validate();
  std::array<std::vector<std::size_t>, 3> out;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    Rng rng = make_rng(seed, Stream::split, {static_cast<std::uint64_t>(c)});
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * f.train));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * f.val)));
    for (std::size_t k = 0; k < idx.size(); ++k) out[k < n_train ? 0 : k < n_train + n_val ? 1 : 2].push_back(idx[k]);
  }
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

/// Writes clouds, images, manifest.jsonl and train/val/test.jsonl into `dir`.
/// Samples are generated and written one at a time.
inline WrittenDataset write_dataset(const fs::path& dir, const std::vector<ClassProfile>& profiles,
                                    std::size_t n_per_class, std::uint64_t seed, const SplitFractions& split = {},
                                    const SynthOptions& opt = {}) {
  validate_profiles(profiles);
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  for (const char* sub : {"lidar", "radar", "image"}) fs::create_directories(dir / sub);
  WrittenDataset out;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n_per_class; ++i)
    for (int c = 0; c < kNumClasses; ++c) {
      const auto s = generate_sample(profiles, c, i, seed, opt);
      char stem[32];
      std::snprintf(stem, sizeof stem, "%06zu", out.all.entries.size());
      ManifestEntry e{std::string("lidar/") + stem + ".bin", std::string("radar/") + stem + ".bin",
                      std::string("image/") + stem + ".ppm", s.t_lidar, s.t_radar, s.t_camera, s.label};
      write_point_cloud(dir / e.lidar_path, s.lidar);
      write_point_cloud(dir / e.radar_path, s.radar);
      write_ppm(dir / e.image_path, s.image);
      out.all.entries.push_back(std::move(e));
      labels.push_back(c);
    }
  const auto parts = stratified_split(labels, split, seed);
  Manifest* targets[3] = {&out.train, &out.val, &out.test};
  for (std::size_t k = 0; k < 3; ++k)
    for (auto i : parts[k]) targets[k]->entries.push_back(out.all.entries[i]);
  for (Manifest* m : {&out.all, &out.train, &out.val, &out.test}) m->base_dir = dir;
  write_manifest(dir / "manifest.jsonl", out.all);
  write_manifest(dir / "train.jsonl", out.train);
  write_manifest(dir / "val.jsonl", out.val);
  write_manifest(dir / "test.jsonl", out.test);
  return out;
}

}  // namespace lrcw
