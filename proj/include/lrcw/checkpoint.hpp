#pragma once

// Checkpoint container: a JSON index followed by BEVT tensor records.
//
//   "BEVK" | u32 version=1 | u64 index_bytes | index JSON | BEVT records...
//
// Index offsets are relative to the first byte after the JSON. Each tensor
// entry names a parameter value, its optimizer moments (".adam_m",
// ".adam_v") or a buffer. Files are written to a temporary sibling and
// renamed into place so a crash never leaves a half-written checkpoint.

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "json.hpp"
#include "lrcw/error.hpp"
#include "lrcw/model.hpp"
#include "lrcw/nn/optim.hpp"
#include "lrcw/sensor_io.hpp"

namespace lrcw {

inline constexpr char kCheckpointMagic[4] = {'B', 'E', 'V', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
  nn::AdamW optimizer;
  nn::PlateauScheduler scheduler;
  std::uint64_t epoch = 0;
};

struct Checkpoint {
  ModelSpec spec;
  TrainingState state;
  nlohmann::json meta = nlohmann::json::object();  // normalization stats, config echo, ...
};

namespace detail {

inline nlohmann::json spec_json(const ModelSpec& s) {
  return {{"variant", to_string(s.variant)},
          {"feature_dim", s.feature_dim},
          {"input_size", s.input_size},
          {"architecture", s.architecture},
          {"dropout", s.dropout}};
}

inline void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(const char* p) {
  return static_cast<std::uint64_t>(get_u32(p)) | (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

}  // namespace detail

inline std::string encode_checkpoint(WeatherNet<float>& model, const TrainingState& state, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string blobs;
  const auto add = [&](const std::string& name, const TensorF& t) {
    const std::string rec = encode_tensor(t);
    tensors.push_back({{"name", name}, {"offset", blobs.size()}, {"bytes", rec.size()}});
    blobs += rec;
  };
  for (auto* p : model.params()) {
    add(p->name, p->value);
    add(p->name + ".adam_m", p->m);
    add(p->name + ".adam_v", p->v);
  }
  for (const auto& b : model.buffers()) add(b.name, *b.value);

  const auto& o = state.optimizer;
  const auto& s = state.scheduler;
  nlohmann::json index = {
      {"format", "lrcw-checkpoint"},
      {"model", detail::spec_json(model.spec())},
      {"epoch", state.epoch},
      {"optimizer",
       {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
        {"weight_decay", o.weight_decay}, {"step", o.step_count}}},
      {"scheduler",
       {{"lr", s.lr}, {"factor", s.factor}, {"patience", s.patience}, {"threshold", s.threshold},
        {"min_lr", s.min_lr}, {"best", s.best}, {"bad_epochs", s.bad_epochs}}},
      {"meta", meta},
      {"tensors", tensors}};
  const std::string idx = index.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, idx.size());
  out += idx;
  out += blobs;
  return out;
}

inline void save_checkpoint(const fs::path& path, WeatherNet<float>& model, const TrainingState& state,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  const fs::path tmp = path.string() + ".tmp";
  detail::write_file(tmp, encode_checkpoint(model, state, meta));
  fs::rename(tmp, path);
}

/// Parses the header and JSON index only.
inline nlohmann::json read_checkpoint_index(std::string_view bytes, const std::string& origin, std::size_t* blob_start = nullptr) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4))
    throw DataError(origin + ": not a checkpoint (bad magic)");
  const auto version = detail::get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw DataError(origin + ": checkpoint version " + std::to_string(version) + " not supported");
  const auto len = detail::get_u64(bytes.data() + 8);
  if (bytes.size() < 16 + len) throw DataError(origin + ": truncated checkpoint index");
  if (blob_start) *blob_start = 16 + static_cast<std::size_t>(len);
  try {
    return nlohmann::json::parse(bytes.substr(16, static_cast<std::size_t>(len)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": corrupt checkpoint index: " + e.what());
  }
}

struct LoadedCheckpoint {
  Checkpoint info;
  WeatherNet<float> model;
};

/// Rebuilds the model from the index (architecture, d, variant) and fills
/// every parameter, moment and buffer. Missing or mis-shaped tensors fail.
inline LoadedCheckpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  std::size_t blob_start = 0;
  const auto index = read_checkpoint_index(bytes, origin, &blob_start);
  Checkpoint info;
  try {
    const auto& m = index.at("model");
    info.spec.variant = parse_variant(m.at("variant").get<std::string>());
    info.spec.feature_dim = m.at("feature_dim").get<std::size_t>();
    info.spec.input_size = m.at("input_size").get<std::size_t>();
    info.spec.architecture = m.at("architecture").get<std::string>();
    info.spec.dropout = m.at("dropout").get<double>();
    info.state.epoch = index.at("epoch").get<std::uint64_t>();
    const auto& o = index.at("optimizer");
    auto& opt = info.state.optimizer;
    opt.lr = o.at("lr");
    opt.beta1 = o.at("beta1");
    opt.beta2 = o.at("beta2");
    opt.eps = o.at("eps");
    opt.weight_decay = o.at("weight_decay");
    opt.step_count = o.at("step");
    const auto& s = index.at("scheduler");
    auto& sch = info.state.scheduler;
    sch.lr = s.at("lr");
    sch.factor = s.at("factor");
    sch.patience = s.at("patience");
    sch.threshold = s.at("threshold");
    sch.min_lr = s.at("min_lr");
    sch.best = s.at("best").is_null() ? std::numeric_limits<double>::infinity() : s.at("best").get<double>();
    sch.bad_epochs = s.at("bad_epochs");
    info.meta = index.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": checkpoint index incomplete: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(origin + ": " + e.what());
  }
  if (info.spec.architecture != kTinyCnnArch)
    throw DataError(origin + ": unknown architecture '" + info.spec.architecture + "'");

  std::map<std::string, std::pair<std::size_t, std::size_t>> where;
  for (const auto& t : index.at("tensors"))
    where[t.at("name").get<std::string>()] = {t.at("offset").get<std::size_t>(), t.at("bytes").get<std::size_t>()};
  const auto fetch = [&](const std::string& name, const Shape& shape) {
    const auto it = where.find(name);
    if (it == where.end()) throw DataError(origin + ": checkpoint lacks tensor '" + name + "'");
    const auto [off, len] = it->second;
    if (blob_start + off + len > bytes.size()) throw DataError(origin + ": tensor '" + name + "' runs past end of file");
    TensorF t = decode_tensor(bytes.substr(blob_start + off, len), origin + ":" + name);
    if (t.shape() != shape)
      throw DataError(origin + ": tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                      shape_str(shape));
    return t;
  };

  LoadedCheckpoint out{info, WeatherNet<float>(info.spec)};
  for (auto* p : out.model.params()) {
    p->value = fetch(p->name, p->value.shape());
    p->m = fetch(p->name + ".adam_m", p->value.shape());
    p->v = fetch(p->name + ".adam_v", p->value.shape());
    p->grad = TensorF(p->value.shape());
  }
  for (auto& b : out.model.buffers()) *b.value = fetch(b.name, b.value->shape());
  return out;
}

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace lrcw
