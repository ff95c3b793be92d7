#pragma once

// RunConfig: the JSON document shared by the train/eval/rasterize commands.
// Every key is optional; missing keys take the defaults below and unknown
// keys are rejected. to_json() emits the fully resolved document.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "lrcw/augment.hpp"
#include "lrcw/bev_raster.hpp"
#include "lrcw/error.hpp"
#include "lrcw/model.hpp"
#include "lrcw/sensor_io.hpp"
#include "lrcw/synth.hpp"

namespace lrcw {

enum class NormMode { dataset, reference };

struct SchedulerConfig {
  double factor = 0.5;
  int patience = 3;
  double threshold = 1e-4;
  double min_lr = 1e-6;
};

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double clip_max_norm = 5.0;
  SchedulerConfig scheduler;
  std::uint64_t seed = 7;
  std::size_t workers = 1;
  NormMode normalization = NormMode::dataset;
  std::int64_t sync_tolerance_us = kDefaultSyncToleranceUs;
  bool class_weights = true;
  bool cache = true;  // persist rasterized BEV tensors next to the data

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (batch norm)");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(clip_max_norm > 0.0)) throw ConfigError("train.clip_max_norm must be > 0");
    if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0)) throw ConfigError("train.scheduler.factor must lie in (0,1)");
    if (scheduler.patience < 1) throw ConfigError("train.scheduler.patience must be >= 1");
    if (scheduler.min_lr < 0.0 || scheduler.threshold < 0.0) throw ConfigError("train.scheduler values must be >= 0");
    if (workers < 1) throw ConfigError("train.workers must be >= 1");
    if (sync_tolerance_us < 0) throw ConfigError("train.sync_tolerance_us must be >= 0");
  }
};

struct AugmentConfig {
  CameraAugmentSpec camera;
  RadarAugmentSpec radar;
};

struct RunConfig {
  FrustumSpec frustum;
  GridSpec grid;
  ModelSpec model;
  TrainConfig train;
  AugmentConfig augment;
  std::string profiles = "config/profiles.json";

  void validate() const {
    frustum.validate();
    grid.validate(frustum);
    if (grid.out_h != grid.out_w) throw ConfigError("grid.out_h and grid.out_w must match (square backbone input)");
    if (model.input_size != grid.out_h) throw ConfigError("model input size must equal the grid output size");
    if (model.feature_dim < 1) throw ConfigError("model.d must be >= 1");
    if (model.dropout < 0.0 || model.dropout >= 1.0) throw ConfigError("model.dropout must lie in [0,1)");
    if (model.architecture != kTinyCnnArch) throw ConfigError("model.architecture must be '" + std::string(kTinyCnnArch) + "'");
    train.validate();
    augment.camera.validate();
    augment.radar.validate();
  }
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline std::string_view to_string(NormMode m) { return m == NormMode::reference ? "reference" : "dataset"; }

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& ca = c.augment.camera;
  const auto& ra = c.augment.radar;
  return {
      {"frustum", {{"x_min", c.frustum.x_min}, {"x_max", c.frustum.x_max}, {"y_min", c.frustum.y_min}, {"y_max", c.frustum.y_max}}},
      {"grid", {{"resolution", c.grid.resolution}, {"out_h", c.grid.out_h}, {"out_w", c.grid.out_w}}},
      {"model",
       {{"variant", to_string(c.model.variant)}, {"d", c.model.feature_dim}, {"architecture", c.model.architecture},
        {"dropout", c.model.dropout}}},
      {"train",
       {{"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"clip_max_norm", t.clip_max_norm},
        {"scheduler",
         {{"factor", t.scheduler.factor}, {"patience", t.scheduler.patience}, {"threshold", t.scheduler.threshold},
          {"min_lr", t.scheduler.min_lr}}},
        {"seed", t.seed},
        {"workers", t.workers},
        {"normalization", to_string(t.normalization)},
        {"sync_tolerance_us", t.sync_tolerance_us},
        {"class_weights", t.class_weights},
        {"cache", t.cache}}},
      {"augment",
       {{"camera",
         {{"enabled", ca.enabled}, {"hflip_p", ca.hflip_p}, {"vflip_p", ca.vflip_p}, {"rotation_deg", ca.rotation_deg},
          {"brightness", ca.brightness}, {"contrast", ca.contrast}, {"saturation", ca.saturation},
          {"translate", ca.translate}, {"crop_scale", {ca.crop_scale_min, ca.crop_scale_max}}}},
        {"radar", {{"enabled", ra.enabled}, {"rotation_deg", ra.rotation_deg}, {"noise_fraction", ra.noise_fraction}}}}},
      {"profiles", c.profiles}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  RunConfig c;
  reject_unknown(j, {"frustum", "grid", "model", "train", "augment", "profiles"}, "config");
  if (j.contains("frustum")) {
    const auto& f = j["frustum"];
    reject_unknown(f, {"x_min", "x_max", "y_min", "y_max"}, "frustum");
    read_opt(f, "x_min", c.frustum.x_min, "frustum");
    read_opt(f, "x_max", c.frustum.x_max, "frustum");
    read_opt(f, "y_min", c.frustum.y_min, "frustum");
    read_opt(f, "y_max", c.frustum.y_max, "frustum");
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    reject_unknown(g, {"resolution", "out_h", "out_w"}, "grid");
    read_opt(g, "resolution", c.grid.resolution, "grid");
    read_opt(g, "out_h", c.grid.out_h, "grid");
    read_opt(g, "out_w", c.grid.out_w, "grid");
  }
  c.model.input_size = c.grid.out_h;
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"variant", "d", "architecture", "dropout"}, "model");
    std::string variant(to_string(c.model.variant));
    read_opt(m, "variant", variant, "model");
    c.model.variant = parse_variant(variant);
    read_opt(m, "d", c.model.feature_dim, "model");
    read_opt(m, "architecture", c.model.architecture, "model");
    read_opt(m, "dropout", c.model.dropout, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"lr", "weight_decay", "batch_size", "epochs", "clip_max_norm", "scheduler", "seed", "workers",
                       "normalization", "sync_tolerance_us", "class_weights", "cache"},
                   "train");
    auto& o = c.train;
    read_opt(t, "lr", o.lr, "train");
    read_opt(t, "weight_decay", o.weight_decay, "train");
    read_opt(t, "batch_size", o.batch_size, "train");
    read_opt(t, "epochs", o.epochs, "train");
    read_opt(t, "clip_max_norm", o.clip_max_norm, "train");
    read_opt(t, "seed", o.seed, "train");
    read_opt(t, "workers", o.workers, "train");
    read_opt(t, "sync_tolerance_us", o.sync_tolerance_us, "train");
    read_opt(t, "class_weights", o.class_weights, "train");
    read_opt(t, "cache", o.cache, "train");
    std::string norm(to_string(o.normalization));
    read_opt(t, "normalization", norm, "train");
    if (norm != "dataset" && norm != "reference") throw ConfigError("train.normalization must be 'dataset' or 'reference'");
    o.normalization = norm == "reference" ? NormMode::reference : NormMode::dataset;
    if (t.contains("scheduler")) {
      const auto& s = t["scheduler"];
      reject_unknown(s, {"factor", "patience", "threshold", "min_lr"}, "train.scheduler");
      read_opt(s, "factor", o.scheduler.factor, "train.scheduler");
      read_opt(s, "patience", o.scheduler.patience, "train.scheduler");
      read_opt(s, "threshold", o.scheduler.threshold, "train.scheduler");
      read_opt(s, "min_lr", o.scheduler.min_lr, "train.scheduler");
    }
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    reject_unknown(a, {"camera", "radar"}, "augment");
    if (a.contains("camera")) {
      const auto& ca = a["camera"];
      auto& o = c.augment.camera;
      reject_unknown(ca, {"enabled", "hflip_p", "vflip_p", "rotation_deg", "brightness", "contrast", "saturation",
                          "translate", "crop_scale"},
                     "augment.camera");
      read_opt(ca, "enabled", o.enabled, "augment.camera");
      read_opt(ca, "hflip_p", o.hflip_p, "augment.camera");
      read_opt(ca, "vflip_p", o.vflip_p, "augment.camera");
      read_opt(ca, "rotation_deg", o.rotation_deg, "augment.camera");
      read_opt(ca, "brightness", o.brightness, "augment.camera");
      read_opt(ca, "contrast", o.contrast, "augment.camera");
      read_opt(ca, "saturation", o.saturation, "augment.camera");
      read_opt(ca, "translate", o.translate, "augment.camera");
      if (ca.contains("crop_scale")) {
        const auto r = detail::range_from(ca["crop_scale"], "augment.camera.crop_scale");
        o.crop_scale_min = r.lo;
        o.crop_scale_max = r.hi;
      }
    }
    if (a.contains("radar")) {
      const auto& ra = a["radar"];
      auto& o = c.augment.radar;
      reject_unknown(ra, {"enabled", "rotation_deg", "noise_fraction"}, "augment.radar");
      read_opt(ra, "enabled", o.enabled, "augment.radar");
      read_opt(ra, "rotation_deg", o.rotation_deg, "augment.radar");
      read_opt(ra, "noise_fraction", o.noise_fraction, "augment.radar");
    }
  }
  read_opt(j, "profiles", c.profiles, "config");
  c.validate();
  return c;
}

inline RunConfig read_run_config(const fs::path& path) {
  try {
    return run_config_from_json(nlohmann::json::parse(detail::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace lrcw
