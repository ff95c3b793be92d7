#pragma once

// Training loop, evaluation, latency benchmark and model-cost report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrcw/checkpoint.hpp"
#include "lrcw/config.hpp"
#include "lrcw/fusion_head.hpp"
#include "lrcw/metrics.hpp"
#include "lrcw/model.hpp"
#include "lrcw/nn/loss.hpp"
#include "lrcw/nn/optim.hpp"
#include "lrcw/pipeline.hpp"

namespace lrcw {

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

inline constexpr const char* kHistoryHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

/// Round-trippable decimal for a double.
inline std::string exact_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_history_csv(const fs::path& path, const std::vector<HistoryRow>& rows) {
  std::string out = std::string(kHistoryHeader) + "\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + exact_decimal(r.train_loss) + "," + exact_decimal(r.train_acc) + "," +
           exact_decimal(r.val_loss) + "," + exact_decimal(r.val_acc) + "," + exact_decimal(r.lr) + "\n";
  detail::write_file(path, out);
}

struct TrainResult {
  std::vector<HistoryRow> history;
  fs::path best_checkpoint;
  fs::path last_checkpoint;
  std::size_t best_epoch = 0;
  NormStats stats;
};

/// Optional per-epoch progress callback (epoch row, elapsed seconds).
using ProgressFn = std::function<void(const HistoryRow&, double)>;

namespace detail {

inline std::vector<std::int64_t> class_counts(const std::vector<int>& labels) {
  std::vector<std::int64_t> counts(kNumClasses, 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

inline int argmax_row(const TensorF& logits, std::size_t i) {
  const std::size_t k = logits.dim(1);
  const float* z = logits.ptr() + i * k;
  return static_cast<int>(std::max_element(z, z + k) - z);
}

struct Pass {
  double weighted_loss = 0.0;  // sum_i w_i * loss_i
  double weight = 0.0;         // sum_i w_i
  std::size_t correct = 0;
  std::size_t seen = 0;
  double loss() const { return weight > 0 ? weighted_loss / weight : 0.0; }
  double acc() const { return seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0; }
  void add(const nn::LossResult<float>& r, const TensorF& logits, const std::vector<int>& labels,
           std::span<const float> weights) {
    double w = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      w += weights[static_cast<std::size_t>(labels[i])];
      correct += argmax_row(logits, i) == labels[i];
    }
    weighted_loss += static_cast<double>(r.loss) * w;
    weight += w;
    seen += labels.size();
  }
};

/// Batches of `batch` consecutive entries of `order`. A trailing batch of a
/// single sample is dropped in training (batch norm needs two).
inline std::vector<std::span<const std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch,
                                                              bool drop_singleton) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    const std::size_t n = std::min(batch, order.size() - i);
    if (drop_singleton && n < 2) break;
    out.emplace_back(order.data() + i, n);
  }
  return out;
}

}  // namespace detail

/// Eval-mode forward over the whole set; returns logits [N,9] in set order.
inline TensorF predict(WeatherNet<float>& model, const PreparedSet& set, const NormStats& stats, const RunConfig& cfg,
                       std::size_t batch_size, std::vector<float>* gates = nullptr) {
  std::vector<std::size_t> order(set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  TensorF logits({set.samples.size(), static_cast<std::size_t>(kNumClasses)});
  AssembleOptions ao{model.variant(), model.spec().input_size, nullptr, cfg.frustum, cfg.grid, cfg.train.seed, 0,
                     cfg.train.workers};
  Rng unused(0);
  for (auto idx : detail::make_batches(order, batch_size, false)) {
    const Batch b = assemble_batch(set, idx, stats, ao);
    const TensorF z = model.forward(b.primary, model.is_fusion() ? &b.camera : nullptr, nn::Mode::eval, unused);
    std::copy(z.vec().begin(), z.vec().end(), logits.ptr() + idx.front() * kNumClasses);
    if (gates && model.is_fusion()) gates->insert(gates->end(), model.last_gates().vec().begin(), model.last_gates().vec().end());
  }
  return logits;
}

/// Full training protocol. Writes history.csv, best.ckpt, last.ckpt and
/// config.json into `out_dir`.
inline TrainResult train(const RunConfig& cfg, const Manifest& train_manifest, const Manifest& val_manifest,
                         const fs::path& out_dir, const ProgressFn& progress = {}) {
  cfg.validate();
  const auto& tc = cfg.train;
  const Manifest train_m = filter_synchronized(train_manifest, tc.sync_tolerance_us);
  const Manifest val_m = filter_synchronized(val_manifest, tc.sync_tolerance_us);
  if (train_m.entries.empty()) throw DataError("training manifest has no synchronized samples");
  if (val_m.entries.empty()) throw DataError("validation manifest has no synchronized samples");
  fs::create_directories(out_dir);
  detail::write_file(out_dir / "config.json", to_json(cfg).dump(2) + "\n");

  const Variant variant = cfg.model.variant;
  const bool radar_aug = uses_radar(variant) && cfg.augment.radar.enabled;
  PrepareOptions po{cfg.frustum, cfg.grid, variant, radar_aug, tc.cache, tc.workers};
  const PreparedSet train_set = prepare(train_m, po);
  po.keep_radar_clouds = false;
  const PreparedSet val_set = prepare(val_m, po);

  TrainResult result;
  result.stats = tc.normalization == NormMode::reference ? NormStats{} : compute_norm_stats(train_set, cfg.frustum, cfg.grid);
  const auto labels = train_set.labels();
  const std::vector<float> weights = tc.class_weights ? nn::compute_class_weights(detail::class_counts(labels))
                                                      : std::vector<float>(kNumClasses, 1.0f);

  WeatherNet<float> model(cfg.model);
  model.init(tc.seed);
  TrainingState state;
  state.optimizer.lr = tc.lr;
  state.optimizer.weight_decay = tc.weight_decay;
  state.scheduler = {tc.lr, tc.scheduler.factor, tc.scheduler.patience, tc.scheduler.threshold, tc.scheduler.min_lr};
  const nlohmann::json meta = {{"normalization", to_json(result.stats)},
                               {"class_weights", weights},
                               {"config", to_json(cfg)}};
  result.best_checkpoint = out_dir / "best.ckpt";
  result.last_checkpoint = out_dir / "last.ckpt";

  const AugmentConfig* aug = &cfg.augment;
  AssembleOptions ao{variant, cfg.model.input_size, aug, cfg.frustum, cfg.grid, tc.seed, 0, tc.workers};
  double best_val = std::numeric_limits<double>::infinity();
  const auto params = model.params();
  const auto t_start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(tc.seed, Stream::shuffle, {epoch});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i))]);

    ao.epoch = epoch;
    detail::Pass tr;
    const auto batches = detail::make_batches(order, tc.batch_size, true);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch b = assemble_batch(train_set, batches[bi], result.stats, ao);
      Rng dropout_rng = make_rng(tc.seed, Stream::dropout, {epoch, bi});
      model.zero_grad();
      const TensorF logits =
          model.forward(b.primary, model.is_fusion() ? &b.camera : nullptr, nn::Mode::train, dropout_rng);
      const auto loss = nn::weighted_softmax_ce<float>(logits, b.labels, weights);
      if (!std::isfinite(loss.loss)) {
        state.epoch = epoch - 1;
        save_checkpoint(result.last_checkpoint, model, state, meta);
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi) + "; last good weights saved to " + result.last_checkpoint.string());
      }
      tr.add(loss, logits, b.labels, weights);
      model.backward(loss.grad);
      nn::clip_grad_norm(params, tc.clip_max_norm);
      try {
        state.optimizer.step(params);  // checks every gradient before touching any weight
      } catch (const NumericError& e) {
        state.epoch = epoch - 1;
        save_checkpoint(result.last_checkpoint, model, state, meta);
        throw NumericError(std::string(e.what()) + "; last good weights saved to " + result.last_checkpoint.string());
      }
    }

    detail::Pass va;
    {
      std::vector<std::size_t> vorder(val_set.samples.size());
      std::iota(vorder.begin(), vorder.end(), 0);
      AssembleOptions vo = ao;
      vo.augment = nullptr;
      Rng unused(0);
      for (auto idx : detail::make_batches(vorder, tc.batch_size, false)) {
        const Batch b = assemble_batch(val_set, idx, result.stats, vo);
        const TensorF logits = model.forward(b.primary, model.is_fusion() ? &b.camera : nullptr, nn::Mode::eval, unused);
        va.add(nn::weighted_softmax_ce<float>(logits, b.labels, weights), logits, b.labels, weights);
      }
    }
    if (!std::isfinite(va.loss())) {
      save_checkpoint(result.last_checkpoint, model, state, meta);
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }

    const HistoryRow row{epoch, tr.loss(), tr.acc(), va.loss(), va.acc(), state.optimizer.lr};
    state.optimizer.lr = state.scheduler.step(va.loss());
    state.epoch = epoch;
    result.history.push_back(row);
    save_checkpoint(result.last_checkpoint, model, state, meta);
    if (va.loss() < best_val) {
      best_val = va.loss();
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, model, state, meta);
    }
    write_history_csv(out_dir / "history.csv", result.history);
    if (progress)
      progress(row, std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::size_t batch_size = 32;
  std::size_t workers = 1;
  fs::path gates_csv;        // written for the gated variant when non-empty
  fs::path gate_vectors;     // [N,2d] BEVT when non-empty
  fs::path confusion_csv;    // when non-empty
  std::size_t latency_iters = 0;  // 0: mean_latency_ms stays 0
};

/// Rebuilds the RunConfig stored alongside a checkpoint.
inline RunConfig config_of(const Checkpoint& info) {
  if (!info.meta.contains("config")) throw DataError("checkpoint carries no run configuration");
  RunConfig cfg = run_config_from_json(info.meta.at("config"));
  cfg.model = info.spec;
  return cfg;
}

struct LatencyStats {
  std::vector<double> samples_ms;
  double mean = 0, p50 = 0, p95 = 0, min = 0, max = 0;
};

/// Nearest-rank percentile of sorted data.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline LatencyStats summarize_latency(std::vector<double> samples_ms) {
  LatencyStats s;
  s.samples_ms = samples_ms;
  if (samples_ms.empty()) return s;
  std::sort(samples_ms.begin(), samples_ms.end());
  s.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
  s.min = samples_ms.front();
  s.max = samples_ms.back();
  s.mean = std::clamp(s.mean, s.min, s.max);  // guards against summation rounding
  s.p50 = percentile_sorted(samples_ms, 50);
  s.p95 = percentile_sorted(samples_ms, 95);
  return s;
}

/// Single-sample eval-mode forward latency on constant inputs.
inline LatencyStats bench_latency(WeatherNet<float>& model, std::size_t n_warmup = 10, std::size_t n_iter = 100) {
  if (n_iter < 1) throw ConfigError("bench needs n_iter >= 1");
  const std::size_t s = model.spec().input_size;
  const TensorF primary({1, primary_channels(model.variant()), s, s}, 0.5f);
  const TensorF camera({1, 3, s, s}, 0.5f);
  const TensorF* cam = model.is_fusion() ? &camera : nullptr;
  Rng unused(0);
  for (std::size_t i = 0; i < n_warmup; ++i) (void)model.forward(primary, cam, nn::Mode::eval, unused);
  std::vector<double> ms;
  ms.reserve(n_iter);
  for (std::size_t i = 0; i < n_iter; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const TensorF z = model.forward(primary, cam, nn::Mode::eval, unused);
    const auto t1 = std::chrono::steady_clock::now();
    if (z.empty()) throw NumericError("empty forward output");
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return summarize_latency(std::move(ms));
}

struct ModelCost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  double gmac() const { return static_cast<double>(macs) / 1e9; }
};

inline ModelCost report_model_cost(WeatherNet<float>& model) { return {count_params(model), count_macs(model)}; }

inline EvalReport evaluate(LoadedCheckpoint& ckpt, const Manifest& manifest, const EvalOptions& opt = {}) {
  if (manifest.entries.empty()) throw DataError("evaluation manifest is empty");
  RunConfig cfg = config_of(ckpt.info);
  cfg.train.workers = opt.workers;
  const NormStats stats = norm_stats_from_json(ckpt.info.meta.at("normalization"));
  auto& model = ckpt.model;

  PrepareOptions po{cfg.frustum, cfg.grid, model.variant(), false, cfg.train.cache, opt.workers};
  const PreparedSet set = prepare(manifest, po);
  std::vector<float> gates;
  const TensorF logits = predict(model, set, stats, cfg, opt.batch_size, &gates);

  ConfusionMatrix cm(kNumClasses);
  std::vector<int> preds(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    preds[i] = detail::argmax_row(logits, i);
    cm.add(set.samples[i].label, preds[i]);
  }
  EvalReport report = make_report(cm);
  const auto cost = report_model_cost(model);
  report.params = cost.params;
  report.macs = cost.macs;
  if (opt.latency_iters > 0) report.mean_latency_ms = bench_latency(model, 2, opt.latency_iters).mean;

  if (!opt.confusion_csv.empty()) {
    std::ofstream os(opt.confusion_csv);
    cm.write_csv(os);
  }
  if (model.is_fusion() && !gates.empty()) {
    const std::size_t two_d = 2 * model.spec().feature_dim;
    const TensorF gate_tensor({set.samples.size(), two_d}, gates);
    if (!opt.gates_csv.empty()) {
      const auto records = gate_records(gate_tensor);
      std::vector<GateCsvRow> rows;
      for (std::size_t i = 0; i < records.size(); ++i)
        rows.push_back({set.samples[i].id, set.samples[i].label, preds[i], records[i].summary_f, records[i].summary_c});
      std::ofstream os(opt.gates_csv);
      write_gates_csv(os, rows);
    }
    if (!opt.gate_vectors.empty()) write_tensor(opt.gate_vectors, gate_tensor);
  }
  return report;
}

inline EvalReport evaluate(const fs::path& checkpoint, const Manifest& manifest, const EvalOptions& opt = {}) {
  auto ckpt = load_checkpoint(checkpoint);
  return evaluate(ckpt, manifest, opt);
}

/// Exports per-sample gate maps for the first `limit` samples: the gate
/// vector [2d] and the last pre-pool activation of both backbones [2,d,h,w].
inline void export_gate_maps(LoadedCheckpoint& ckpt, const Manifest& manifest, const fs::path& dir, std::size_t limit) {
  auto& model = ckpt.model;
  if (!model.is_fusion()) throw ConfigError("gate maps exist only for lrc_weathernet checkpoints");
  RunConfig cfg = config_of(ckpt.info);
  const NormStats stats = norm_stats_from_json(ckpt.info.meta.at("normalization"));
  Manifest head = manifest;
  head.entries.resize(std::min(limit, head.entries.size()));
  PrepareOptions po{cfg.frustum, cfg.grid, model.variant(), false, cfg.train.cache, 1};
  const PreparedSet set = prepare(head, po);
  fs::create_directories(dir);
  AssembleOptions ao{model.variant(), model.spec().input_size, nullptr, cfg.frustum, cfg.grid, 0, 0, 1};
  Rng unused(0);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const std::size_t idx[1] = {i};
    const Batch b = assemble_batch(set, idx, stats, ao);
    (void)model.forward(b.primary, &b.camera, nn::Mode::eval, unused);
    const auto& a_f = model.primary_backbone().last_activation();
    const auto& a_c = model.camera_backbone()->last_activation();
    TensorF maps({2, a_f.dim(1), a_f.dim(2), a_f.dim(3)});
    std::copy(a_f.vec().begin(), a_f.vec().end(), maps.ptr());
    std::copy(a_c.vec().begin(), a_c.vec().end(), maps.ptr() + a_f.size());
    write_tensor(dir / (set.samples[i].id + ".maps.bevt"), maps);
    write_tensor(dir / (set.samples[i].id + ".gates.bevt"), model.last_gates().reshaped({model.last_gates().dim(1)}));
  }
}

}  // namespace lrcw
