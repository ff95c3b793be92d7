// lrcw: command-line entry point.
//
//   lrcw synth     --out DIR --per-class N --seed S --profiles profiles.json
//   lrcw rasterize --manifest M --out DIR [--config run.json]
//   lrcw train     --config train.json --data DIR --out RUNDIR
//   lrcw eval      --checkpoint F --manifest M --report report.json
//   lrcw bench     --checkpoint F --iters 100
//   lrcw inspect   FILE
//
// Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.
// Set LRCW_VERBOSE=0 to silence progress output on stderr.

#include <malloc.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lrcw/lrcw.hpp"

namespace {

using namespace lrcw;

bool verbose() {
  const char* v = std::getenv("LRCW_VERBOSE");
  return v == nullptr || std::string(v) != "0";
}

void log(const std::string& msg) {
  if (verbose()) std::cerr << msg << '\n';
}

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : read_run_config(path);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, profiles;
  std::size_t per_class = 200;
  std::uint64_t seed = 7;
  std::size_t image_size = 224;
  std::vector<double> split{0.6, 0.2, 0.2};
};

int run_synth(const SynthArgs& a) {
  const auto profiles = a.profiles.empty() ? default_profiles() : read_profiles(a.profiles);
  if (a.split.size() != 3) throw ConfigError("--split expects three fractions");
  SynthOptions opt;
  opt.image_size = a.image_size;
  const auto ds = write_dataset(a.out, profiles, a.per_class, a.seed, {a.split[0], a.split[1], a.split[2]}, opt);
  nlohmann::json effective = {{"per_class", a.per_class},
                              {"seed", a.seed},
                              {"image_size", a.image_size},
                              {"split", a.split},
                              {"profiles", nlohmann::json::array()}};
  for (const auto& p : profiles) effective["profiles"].push_back(to_json(p));
  write_json(fs::path(a.out) / "synth_config.json", effective);
  log("synth: wrote " + std::to_string(ds.all.entries.size()) + " samples (" + std::to_string(ds.train.entries.size()) +
      " train / " + std::to_string(ds.val.entries.size()) + " val / " + std::to_string(ds.test.entries.size()) +
      " test) to " + a.out);
  return 0;
}

struct RasterArgs {
  std::string manifest, out, config;
  std::size_t workers = 1;
};

/// One fused raw [3,H,W] BEV tensor per sample plus grid.json.
int run_rasterize(const RasterArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const Manifest m = read_manifest(a.manifest);
  fs::create_directories(a.out);
  parallel_for(m.entries.size(), a.workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const TensorF lidar = raster_lidar(read_point_cloud<LidarPoint>(m.resolve(e.lidar_path)), cfg.frustum, cfg.grid);
    const TensorF radar = raster_radar(read_point_cloud<RadarPoint>(m.resolve(e.radar_path)), cfg.frustum, cfg.grid);
    write_tensor(fs::path(a.out) / (sample_id(e) + ".bevt"), early_fuse(lidar, radar));
  });
  write_json(fs::path(a.out) / "grid.json",
             {{"frustum", to_json(cfg)["frustum"]},
              {"grid", to_json(cfg)["grid"]},
              {"raw_h", cfg.grid.raw_h(cfg.frustum)},
              {"raw_w", cfg.grid.raw_w(cfg.frustum)},
              {"channels", kFusedChannels},
              {"samples", m.entries.size()}});
  log("rasterize: wrote " + std::to_string(m.entries.size()) + " tensors to " + a.out);
  return 0;
}

struct TrainArgs {
  std::string config, data, out, variant, train_manifest, val_manifest;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, epochs;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.workers) cfg.train.workers = *a.workers;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (!a.variant.empty()) cfg.model.variant = parse_variant(a.variant);
  cfg.validate();
  const fs::path data(a.data);
  const Manifest tm = read_manifest(a.train_manifest.empty() ? data / "train.jsonl" : fs::path(a.train_manifest));
  const Manifest vm = read_manifest(a.val_manifest.empty() ? data / "val.jsonl" : fs::path(a.val_manifest));
  log("train: " + std::string(to_string(cfg.model.variant)) + ", " + std::to_string(tm.entries.size()) + " train / " +
      std::to_string(vm.entries.size()) + " val samples, " + std::to_string(cfg.train.epochs) + " epochs");
  const auto result = train(cfg, tm, vm, a.out, [](const HistoryRow& r, double secs) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu  train %.4f / %.3f  val %.4f / %.3f  lr %.2e  (%.0fs)", r.epoch,
                  r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr, secs);
    log(buf);
  });
  log("train: best epoch " + std::to_string(result.best_epoch) + " -> " + result.best_checkpoint.string());
  return 0;
}

struct EvalArgs {
  std::string checkpoint, manifest, report, confusion, gates, gate_vectors, gate_maps;
  std::size_t workers = 1, latency_iters = 20, gate_map_count = 8;
};

int run_eval(const EvalArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  const Manifest m = read_manifest(a.manifest);
  EvalOptions opt;
  opt.workers = a.workers;
  opt.latency_iters = a.latency_iters;
  opt.confusion_csv = a.confusion;
  opt.gates_csv = a.gates;
  opt.gate_vectors = a.gate_vectors;
  const EvalReport r = evaluate(ckpt, m, opt);
  if (!a.gate_maps.empty()) export_gate_maps(ckpt, m, a.gate_maps, a.gate_map_count);
  nlohmann::json j = to_json(r);
  j["checkpoint"] = a.checkpoint;
  j["manifest"] = a.manifest;
  j["variant"] = to_string(ckpt.model.variant());
  write_json(a.report, j);
  char buf[160];
  std::snprintf(buf, sizeof buf, "eval: %s accuracy %.4f macro-F1 %.4f on %lld samples", std::string(to_string(ckpt.model.variant())).c_str(),
                r.accuracy, r.macro_f1, static_cast<long long>(r.confusion.total()));
  log(buf);
  return 0;
}

struct BenchArgs {
  std::string checkpoint, report;
  std::size_t iters = 100, warmup = 10;
};

int run_bench(const BenchArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  const LatencyStats s = bench_latency(ckpt.model, a.warmup, a.iters);
  const ModelCost cost = report_model_cost(ckpt.model);
  const nlohmann::json j = {{"variant", to_string(ckpt.model.variant())},
                            {"iters", a.iters},
                            {"warmup", a.warmup},
                            {"mean_ms", s.mean},
                            {"p50_ms", s.p50},
                            {"p95_ms", s.p95},
                            {"min_ms", s.min},
                            {"max_ms", s.max},
                            {"params", cost.params},
                            {"macs", cost.macs},
                            {"gmac", cost.gmac()}};
  if (!a.report.empty()) write_json(a.report, j);
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s: mean %.3f ms  p50 %.3f  p95 %.3f  params %llu  GMAC %.4f",
                std::string(to_string(ckpt.model.variant())).c_str(), s.mean, s.p50, s.p95,
                static_cast<unsigned long long>(cost.params), cost.gmac());
  std::cout << buf << '\n';
  return 0;
}

int run_inspect(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.compare(0, 4, std::string(kBevtMagic, 4)) == 0) {
    const TensorF t = decode_tensor(bytes, path);
    std::cout << path << ": BEVT v" << kBevtVersion << " shape " << shape_str(t.shape()) << " dtype float32\n";
    return 0;
  }
  if (bytes.compare(0, 4, std::string(kCheckpointMagic, 4)) == 0) {
    const auto index = read_checkpoint_index(bytes, path);
    const auto loaded = decode_checkpoint(bytes, path);
    auto model = loaded.model;
    std::cout << path << ": checkpoint v" << kCheckpointVersion << '\n'
              << "  model      " << index.at("model").dump() << '\n'
              << "  epoch      " << index.at("epoch") << '\n'
              << "  optimizer  " << index.at("optimizer").dump() << '\n'
              << "  tensors    " << index.at("tensors").size() << " (dtype float32)\n"
              << "  params     " << count_params(model) << '\n'
              << "  macs       " << count_macs(model) << '\n';
    return 0;
  }
  throw DataError(path + ": unrecognized file (expected BEVT tensor or checkpoint)");
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large activation buffers on the heap free lists instead of
  // round-tripping them through mmap on every batch.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"LiDAR/RADAR/camera weather classification toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate the synthetic 9-class dataset");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--per-class", sa.per_class, "samples per class")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sa.seed, "random seed");
  synth->add_option("--profiles", sa.profiles, "class profile JSON (default: built-in table)");
  synth->add_option("--image-size", sa.image_size, "square image side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--split", sa.split, "train,val,test fractions")->delimiter(',')->expected(3);

  RasterArgs ra;
  auto* raster = app.add_subcommand("rasterize", "rasterize a manifest to fused BEV tensors");
  raster->add_option("--manifest", ra.manifest, "JSON-lines manifest")->required();
  raster->add_option("--out", ra.out, "output directory")->required();
  raster->add_option("--config", ra.config, "run config (frustum/grid sections used)");
  raster->add_option("--workers", ra.workers, "worker threads")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train one model variant");
  tr->add_option("--config", ta.config, "run config JSON");
  tr->add_option("--data", ta.data, "dataset directory with train.jsonl/val.jsonl")->required();
  tr->add_option("--out", ta.out, "run directory")->required();
  tr->add_option("--variant", ta.variant, "override model.variant");
  tr->add_option("--train-manifest", ta.train_manifest, "override the training manifest");
  tr->add_option("--val-manifest", ta.val_manifest, "override the validation manifest");
  tr->add_option("--seed", ta.seed, "override train.seed");
  tr->add_option("--workers", ta.workers, "override train.workers")->check(CLI::PositiveNumber);
  tr->add_option("--epochs", ta.epochs, "override train.epochs")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  ev->add_option("--manifest", ea.manifest, "JSON-lines manifest")->required();
  ev->add_option("--report", ea.report, "report JSON path")->required();
  ev->add_option("--confusion", ea.confusion, "confusion matrix CSV path");
  ev->add_option("--gates", ea.gates, "gates.csv path (lrc_weathernet only)");
  ev->add_option("--gate-vectors", ea.gate_vectors, "BEVT path for the [N,2d] gate vectors");
  ev->add_option("--gate-maps", ea.gate_maps, "directory for per-sample gate maps");
  ev->add_option("--gate-map-count", ea.gate_map_count, "samples exported to --gate-maps");
  ev->add_option("--workers", ea.workers, "worker threads")->check(CLI::PositiveNumber);
  ev->add_option("--latency-iters", ea.latency_iters, "single-sample timing iterations (0 disables)");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "single-sample inference latency and model cost");
  be->add_option("--checkpoint", ba.checkpoint, "checkpoint file")->required();
  be->add_option("--iters", ba.iters, "timed iterations")->check(CLI::PositiveNumber);
  be->add_option("--warmup", ba.warmup, "untimed warmup iterations");
  be->add_option("--report", ba.report, "JSON output path");

  std::string inspect_path;
  auto* in = app.add_subcommand("inspect", "print tensor or checkpoint headers");
  in->add_option("file", inspect_path, "BEVT tensor or checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*raster) return run_rasterize(ra);
    if (*tr) return run_train(ta);
    if (*ev) return run_eval(ea);
    if (*be) return run_bench(ba);
    if (*in) return run_inspect(inspect_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
