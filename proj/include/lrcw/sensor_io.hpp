#pragma once

// Fixed-layout binary readers/writers for point clouds, tensors and images,
// plus the JSON-lines sample manifest.
//
// Point clouds are headerless arrays of little-endian f32 records:
//   LiDAR  (16 bytes): x y z intensity
//   RADAR  (20 bytes): x y z snr rcs
// Tensors use the "BEVT" container:
//   "BEVT" | u32 version=1 | u8 ndim | ndim x u32 dims | f32 payload

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrcw/error.hpp"
#include "lrcw/tensor.hpp"

namespace lrcw {

namespace fs = std::filesystem;

inline constexpr int kNumClasses = 9;

struct LidarPoint {
  static constexpr std::size_t kFields = 4;
  float x = 0, y = 0, z = 0, intensity = 0;

  std::array<float, kFields> fields() const { return {x, y, z, intensity}; }
  static LidarPoint from(const float* f) { return {f[0], f[1], f[2], f[3]}; }
  bool operator==(const LidarPoint&) const = default;
};

struct RadarPoint {
  static constexpr std::size_t kFields = 5;
  float x = 0, y = 0, z = 0, snr = 0, rcs = 0;

  std::array<float, kFields> fields() const { return {x, y, z, snr, rcs}; }
  static RadarPoint from(const float* f) { return {f[0], f[1], f[2], f[3], f[4]}; }
  bool operator==(const RadarPoint&) const = default;
};

using LidarCloud = std::vector<LidarPoint>;
using RadarCloud = std::vector<RadarPoint>;

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  v = to_le(v);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_le(v);
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("read failure on " + path.string());
  return std::move(ss).str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failure on " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point clouds

template <class Point>
std::vector<Point> decode_point_cloud(const std::string& bytes, const std::string& origin = "<memory>") {
  constexpr std::size_t rec = Point::kFields * 4;
  if (bytes.size() % rec != 0) {
    throw DataError(origin + ": truncated record (" + std::to_string(bytes.size()) + " bytes is not a multiple of " +
                    std::to_string(rec) + ")");
  }
  const std::size_t n = bytes.size() / rec;
  std::vector<Point> cloud;
  cloud.reserve(n);
  float f[Point::kFields];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < Point::kFields; ++k) {
      f[k] = detail::get_f32(bytes.data() + i * rec + k * 4);
      if (!std::isfinite(f[k])) throw DataError(origin + ": non-finite field in record " + std::to_string(i));
    }
    cloud.push_back(Point::from(f));
  }
  return cloud;
}

template <class Point>
std::string encode_point_cloud(const std::vector<Point>& cloud) {
  std::string out;
  out.reserve(cloud.size() * Point::kFields * 4);
  for (const auto& p : cloud)
    for (float f : p.fields()) detail::put_f32(out, f);
  return out;
}

template <class Point>
std::vector<Point> read_point_cloud(const fs::path& path) {
  return decode_point_cloud<Point>(detail::read_file(path), path.string());
}

template <class Point>
void write_point_cloud(const fs::path& path, const std::vector<Point>& cloud) {
  detail::write_file(path, encode_point_cloud(cloud));
}

// ---------------------------------------------------------------------------
// BEVT tensors

inline constexpr char kBevtMagic[4] = {'B', 'E', 'V', 'T'};
inline constexpr std::uint32_t kBevtVersion = 1;

inline std::string encode_tensor(const TensorF& t) {
  if (t.rank() == 0 || t.rank() > 255) throw ShapeError("BEVT tensors need 1..255 dims");
  std::string out(kBevtMagic, 4);
  detail::put_u32(out, kBevtVersion);
  out.push_back(static_cast<char>(t.rank()));
  for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + t.size() * 4);
  for (float v : t.data()) detail::put_f32(out, v);
  return out;
}

inline TensorF decode_tensor(std::string_view bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kBevtMagic, 4) != 0) throw DataError(origin + ": bad magic");
  const auto version = detail::get_u32(bytes.data() + 4);
  if (version != kBevtVersion) throw DataError(origin + ": unsupported BEVT version " + std::to_string(version));
  const std::size_t ndim = static_cast<unsigned char>(bytes[8]);
  const std::size_t header = 9 + 4 * ndim;
  if (ndim == 0 || bytes.size() < header) throw DataError(origin + ": truncated header");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) shape[i] = detail::get_u32(bytes.data() + 9 + 4 * i);
  const std::size_t n = shape_size(shape);
  if (bytes.size() - header != n * 4) {
    throw DataError(origin + ": payload length mismatch (shape " + shape_str(shape) + " needs " + std::to_string(n * 4) +
                    " bytes, found " + std::to_string(bytes.size() - header) + ")");
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = detail::get_f32(bytes.data() + header + 4 * i);
  return TensorF(std::move(shape), std::move(data));
}

inline void write_tensor(const fs::path& path, const TensorF& t) { detail::write_file(path, encode_tensor(t)); }

inline TensorF read_tensor(const fs::path& path) { return decode_tensor(detail::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Images (binary PPM, 8-bit)

/// Decodes a P6 image to [3,H,W] floats in [0,1], channel order R,G,B.
inline TensorF decode_ppm(const std::string& bytes, const std::string& origin = "<memory>") {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P6") throw DataError(origin + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw DataError(origin + ": malformed PPM header");
  }
  if (maxval != 255) throw DataError(origin + ": only 8-bit PPM is supported");
  ++pos;  // single whitespace before raster
  if (w == 0 || h == 0 || bytes.size() < pos + 3 * w * h) throw DataError(origin + ": truncated PPM raster");
  TensorF img({3, h, w});
  const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[c * plane + i] = static_cast<float>(raster[3 * i + c]) / 255.0f;
  return img;
}

inline std::string encode_ppm(const TensorF& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("PPM export needs a [3,H,W] tensor");
  const std::size_t h = img.dim(1), w = img.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(img[c * plane + i], 0.0f, 1.0f);
      out[header + 3 * i + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
  return out;
}

inline TensorF read_ppm(const fs::path& path) { return decode_ppm(detail::read_file(path), path.string()); }

inline void write_ppm(const fs::path& path, const TensorF& img) { detail::write_file(path, encode_ppm(img)); }

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string lidar_path;
  std::string radar_path;
  std::string image_path;
  std::int64_t t_lidar = 0;
  std::int64_t t_radar = 0;
  std::int64_t t_camera = 0;
  int label = 0;

  bool operator==(const ManifestEntry&) const = default;
};

/// Relative paths in entries resolve against `base_dir`.
struct Manifest {
  std::vector<ManifestEntry> entries;
  fs::path base_dir;

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

inline void validate_entry(const ManifestEntry& e, std::size_t line) {
  if (e.lidar_path.empty() || e.radar_path.empty() || e.image_path.empty())
    throw DataError("manifest line " + std::to_string(line) + ": empty path");
  if (e.label < 0 || e.label >= kNumClasses)
    throw DataError("manifest line " + std::to_string(line) + ": label " + std::to_string(e.label) + " out of range");
}

inline nlohmann::json to_json(const ManifestEntry& e) {
  return {{"lidar", e.lidar_path},   {"radar", e.radar_path},   {"image", e.image_path},
          {"t_lidar", e.t_lidar},    {"t_radar", e.t_radar},    {"t_camera", e.t_camera},
          {"label", e.label}};
}

inline Manifest parse_manifest(const std::string& text, fs::path base_dir = {}) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestEntry e;
    try {
      const auto j = nlohmann::json::parse(line);
      e.lidar_path = j.at("lidar").get<std::string>();
      e.radar_path = j.at("radar").get<std::string>();
      e.image_path = j.at("image").get<std::string>();
      e.t_lidar = j.at("t_lidar").get<std::int64_t>();
      e.t_radar = j.at("t_radar").get<std::int64_t>();
      e.t_camera = j.at("t_camera").get<std::int64_t>();
      e.label = j.at("label").get<int>();
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
    validate_entry(e, lineno);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline Manifest read_manifest(const fs::path& path) {
  return parse_manifest(detail::read_file(path), path.parent_path());
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  std::string out;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    validate_entry(m.entries[i], i + 1);
    out += to_json(m.entries[i]).dump() + "\n";
  }
  detail::write_file(path, out);
}

inline constexpr std::int64_t kDefaultSyncToleranceUs = 50'000;

inline std::int64_t max_time_gap(const ManifestEntry& e) {
  const auto hi = std::max({e.t_lidar, e.t_radar, e.t_camera});
  const auto lo = std::min({e.t_lidar, e.t_radar, e.t_camera});
  return hi - lo;
}

/// Keeps entries whose three timestamps lie within `tolerance_us` of each other.
inline Manifest filter_synchronized(const Manifest& m, std::int64_t tolerance_us = kDefaultSyncToleranceUs) {
  if (tolerance_us < 0) throw ConfigError("synchronization tolerance must be non-negative");
  Manifest out;
  out.base_dir = m.base_dir;
  std::copy_if(m.entries.begin(), m.entries.end(), std::back_inserter(out.entries),
               [&](const ManifestEntry& e) { return max_time_gap(e) <= tolerance_us; });
  return out;
}

}  // namespace lrcw
