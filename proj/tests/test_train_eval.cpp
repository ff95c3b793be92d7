#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "lrcw/lrcw.hpp"
#include "test_util.hpp"

namespace lrcw {
namespace {

using test::TempDir;

std::string slurp(const fs::path& p) { return detail::read_file(p); }

bool bit_equal(const TensorF& a, const TensorF& b) { return a.bit_equal(b); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, PerfectPredictionsGiveOnesAndDiagonal) {
  ConfusionMatrix cm(9);
  for (int c = 0; c < 9; ++c)
    for (int k = 0; k < 3; ++k) cm.add(c, c);
  EXPECT_EQ(cm.accuracy(), 1.0);
  EXPECT_EQ(cm.macro_f1(), 1.0);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(cm.at(i, j), i == j ? 3 : 0);
}

TEST(Metrics, TwoClassToyMacroF1IsTwoThirds) {
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1);
  EXPECT_NEAR(cm.f1(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(cm.f1(1), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(cm.macro_f1(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(cm.accuracy(), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, AllClassZeroOnBalancedData) {
  ConfusionMatrix cm(9);
  for (int c = 0; c < 9; ++c)
    for (int k = 0; k < 5; ++k) cm.add(c, 0);
  EXPECT_DOUBLE_EQ(cm.accuracy(), 1.0 / 9.0);
  // Class 0 has precision 1/9 and recall 1, so F1 = 0.2; every other class scores 0.
  EXPECT_NEAR(cm.macro_f1(), 0.2 / 9.0, 1e-15);
}

TEST(Metrics, ZeroSupportClassCountsAsZero) {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 1);
  EXPECT_EQ(cm.support(2), 0);
  EXPECT_EQ(cm.f1(2), 0.0);
  EXPECT_NEAR(cm.macro_f1(), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, RowSumsTotalsAndTrace) {
  Rng rng(5);
  ConfusionMatrix cm(9);
  std::vector<std::int64_t> support(9, 0);
  for (int i = 0; i < 500; ++i) {
    const int t = static_cast<int>(uniform01(rng) * 9), p = static_cast<int>(uniform01(rng) * 9);
    cm.add(t, p);
    ++support[static_cast<std::size_t>(t)];
  }
  EXPECT_EQ(cm.total(), 500);
  for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(cm.support(c), support[c]);
  EXPECT_EQ(cm.accuracy(), static_cast<double>(cm.trace()) / 500.0);
  EXPECT_GE(cm.macro_f1(), 0.0);
  EXPECT_LE(cm.macro_f1(), 1.0);
}

TEST(Metrics, MacroF1InvariantToRelabeling) {
  Rng rng(9);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[4]);
  ConfusionMatrix a(9), b(9);
  for (int i = 0; i < 400; ++i) {
    const int t = static_cast<int>(uniform01(rng) * 9);
    const int p = uniform01(rng) < 0.6 ? t : static_cast<int>(uniform01(rng) * 9);
    a.add(t, p);
    b.add(perm[static_cast<std::size_t>(t)], perm[static_cast<std::size_t>(p)]);
  }
  EXPECT_NEAR(a.macro_f1(), b.macro_f1(), 1e-12);
  EXPECT_EQ(a.accuracy(), b.accuracy());
}

TEST(Metrics, SymmetricEqualF1CaseMatchesAccuracy) {
  // Cyclic confusion: every class keeps 3 and leaks 1 to its successor.
  ConfusionMatrix cm(9);
  for (int c = 0; c < 9; ++c) {
    for (int k = 0; k < 3; ++k) cm.add(c, c);
    cm.add(c, (c + 1) % 9);
  }
  EXPECT_NEAR(cm.macro_f1(), cm.accuracy(), 1e-15);
  EXPECT_NEAR(cm.accuracy(), 0.75, 1e-15);
}

TEST(Metrics, OutOfRangeClassThrows) {
  ConfusionMatrix cm(9);
  EXPECT_THROW(cm.add(9, 0), ShapeError);
  EXPECT_THROW(cm.add(0, -1), ShapeError);
}

TEST(Metrics, ConfusionCsvLayout) {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(2, 1);
  cm.add(2, 1);
  std::ostringstream os;
  cm.write_csv(os);
  EXPECT_EQ(os.str(), "true\\pred,0,1,2\n0,1,0,0\n1,0,0,0\n2,0,2,0\n");
}

TEST(Metrics, ReportJsonCarriesAllFields) {
  ConfusionMatrix cm(9);
  cm.add(1, 1);
  cm.add(2, 3);
  EvalReport r = make_report(cm);
  r.params = 10;
  r.macs = 2'000'000'000;
  const auto j = to_json(r);
  EXPECT_EQ(j.at("samples"), 2);
  EXPECT_EQ(j.at("confusion").size(), 9u);
  EXPECT_EQ(j.at("f1").size(), 9u);
  EXPECT_DOUBLE_EQ(j.at("gmac").get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(j.at("accuracy").get<double>(), 0.5);
}

// ---------------------------------------------------------------------------
// Config

TEST(RunConfigTest, DefaultsAreDocumentedValues) {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(c.train.lr, 3e-4);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.train.clip_max_norm, 5.0);
  EXPECT_EQ(c.train.scheduler.factor, 0.5);
  EXPECT_EQ(c.train.scheduler.patience, 3);
  EXPECT_EQ(c.train.scheduler.min_lr, 1e-6);
  EXPECT_EQ(c.train.workers, 1u);
  EXPECT_EQ(c.model.variant, Variant::lrc_weathernet);
  EXPECT_EQ(c.model.feature_dim, 64u);
  EXPECT_EQ(c.grid.out_h, 224u);
  EXPECT_EQ(c.grid.resolution, 0.1);
}

TEST(RunConfigTest, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_THROW(run_config_from_json({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"learning_rate", 0.1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"scheduler", {{"gamma", 0.1}}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"augment", {{"radar", {{"flip", true}}}}}}), ConfigError);
}

TEST(RunConfigTest, InvalidValuesRejected) {
  EXPECT_THROW(run_config_from_json({{"train", {{"lr", 0.0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"batch_size", 1}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"lr", "fast"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", {{"variant", "thermal_only"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"grid", {{"out_h", 32}, {"out_w", 64}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"frustum", {{"x_min", 10.0}, {"x_max", 5.0}}}}), ConfigError);
}

TEST(RunConfigTest, ResolvedDocumentRoundTrips) {
  const nlohmann::json in = {{"grid", {{"out_h", 32}, {"out_w", 32}}},
                             {"model", {{"variant", "radar_only"}, {"d", 16}}},
                             {"train", {{"epochs", 3}, {"seed", 11}, {"normalization", "reference"}}}};
  const RunConfig c = run_config_from_json(in);
  EXPECT_EQ(c.model.input_size, 32u);
  EXPECT_EQ(c.model.variant, Variant::radar_only);
  EXPECT_EQ(c.train.normalization, NormMode::reference);
  const auto resolved = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(resolved)), resolved);
}

TEST(RunConfigTest, ShippedConfigsParse) {
  const fs::path dir = fs::path(LRCW_SOURCE_DIR) / "config";
  for (const char* name : {"train.json", "train_smoke.json", "rasterize.json"}) {
    SCOPED_TRACE(name);
    EXPECT_NO_THROW(read_run_config(dir / name));
  }
}

TEST(RunConfigTest, MalformedJsonIsConfigError) {
  TempDir tmp("cfg");
  detail::write_file(tmp / "bad.json", "{\"train\": ");
  EXPECT_THROW(read_run_config(tmp / "bad.json"), ConfigError);
}

// ---------------------------------------------------------------------------
// Shared small dataset: 10 samples per class, 32x32 images, split 6/2/2.

class SmallData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("traindata");
    SynthOptions opt;
    opt.image_size = 32;
    data_ = new WrittenDataset(write_dataset(dir_->path(), default_profiles(), 10, 7, {}, opt));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
    data_ = nullptr;
    dir_ = nullptr;
  }

  static RunConfig small_config(Variant v) {
    RunConfig c;
    c.grid.out_h = c.grid.out_w = 32;
    c.model.input_size = 32;
    c.model.feature_dim = 8;
    c.model.variant = v;
    c.train.batch_size = 8;
    c.train.epochs = 2;
    c.train.cache = false;
    return c;
  }

  static TempDir* dir_;
  static WrittenDataset* data_;
};

TempDir* SmallData::dir_ = nullptr;
WrittenDataset* SmallData::data_ = nullptr;

TEST_F(SmallData, SplitSizes) {
  EXPECT_EQ(data_->all.entries.size(), 90u);
  EXPECT_EQ(data_->train.entries.size(), 54u);
  EXPECT_EQ(data_->val.entries.size(), 18u);
  EXPECT_EQ(data_->test.entries.size(), 18u);
}

TEST_F(SmallData, PrepareShapesPerVariant) {
  const RunConfig c = small_config(Variant::lrc_weathernet);
  PrepareOptions po{c.frustum, c.grid, Variant::lrc_weathernet, false, false, 1};
  const auto set = prepare(data_->val, po);
  ASSERT_EQ(set.samples.size(), 18u);
  for (const auto& s : set.samples) {
    EXPECT_EQ(s.lidar.shape(), (Shape{1, 32, 32}));
    EXPECT_EQ(s.radar.shape(), (Shape{2, 32, 32}));
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
  }
  po.variant = Variant::camera_only;
  const auto cam = prepare(data_->val, po);
  EXPECT_TRUE(cam.samples[0].lidar.empty());
  EXPECT_TRUE(cam.samples[0].radar.empty());
}

TEST_F(SmallData, CacheRoundTripIsBitExact) {
  TempDir tmp("cache");
  Manifest m = data_->val;
  // Copy into a private base dir so the cache lands in the temp dir.
  for (const auto& e : m.entries)
    for (const auto& rel : {e.lidar_path, e.radar_path, e.image_path}) {
      fs::create_directories((tmp.path() / rel).parent_path());
      fs::copy_file(m.resolve(rel), tmp.path() / rel);
    }
  m.base_dir = tmp.path();
  const RunConfig c = small_config(Variant::early_fusion);
  PrepareOptions po{c.frustum, c.grid, Variant::early_fusion, false, true, 1};
  const auto first = prepare(m, po);
  const fs::path cache = tmp.path() / "cache" / raster_cache_key(c.frustum, c.grid);
  ASSERT_TRUE(fs::exists(cache));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& f : fs::directory_iterator(cache)) ++files;
  EXPECT_EQ(files, 2 * m.entries.size());
  const auto second = prepare(m, po);
  po.cache = false;
  const auto fresh = prepare(m, po);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    EXPECT_TRUE(bit_equal(first.samples[i].lidar, second.samples[i].lidar));
    EXPECT_TRUE(bit_equal(first.samples[i].radar, fresh.samples[i].radar));
  }
}

TEST_F(SmallData, CacheKeyDependsOnGrid) {
  FrustumSpec f;
  GridSpec a, b;
  b.resolution = 0.2;
  EXPECT_NE(raster_cache_key(f, a), raster_cache_key(f, b));
  EXPECT_EQ(raster_cache_key(f, a), raster_cache_key(f, GridSpec{}));
}

TEST_F(SmallData, NormStatsMatchDirectMoments) {
  const RunConfig c = small_config(Variant::early_fusion);
  PrepareOptions po{c.frustum, c.grid, Variant::early_fusion, false, false, 1};
  const auto set = prepare(data_->train, po);
  const auto st = compute_norm_stats(set, c.frustum, c.grid);
  double sum = 0, sq = 0, n = 0;
  for (const auto& s : set.samples)
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      const double v = s.radar[32 * 32 + i];  // rcs plane
      sum += v;
      sq += v * v;
      n += 1;
    }
  const double mean = sum / n;
  EXPECT_NEAR(st.radar_mean[1], mean, 1e-5 * std::max(1.0, std::fabs(mean)));
  EXPECT_NEAR(st.radar_std[1], std::sqrt(sq / n - mean * mean), 1e-4);
  EXPECT_EQ(st.camera_mean, NormStats{}.camera_mean);
  EXPECT_EQ(norm_stats_from_json(to_json(st)), st);
}

TEST_F(SmallData, NormStatsJsonValidated) {
  auto j = to_json(NormStats{});
  j["radar"]["mean"] = {1.0};
  EXPECT_THROW(norm_stats_from_json(j), DataError);
  EXPECT_THROW(norm_stats_from_json(nlohmann::json::object()), DataError);
}

TEST_F(SmallData, AssembleIndependentOfWorkerCount) {
  const RunConfig c = small_config(Variant::lrc_weathernet);
  PrepareOptions po{c.frustum, c.grid, Variant::lrc_weathernet, true, false, 1};
  const auto set = prepare(data_->train, po);
  const NormStats st = compute_norm_stats(set, c.frustum, c.grid);
  std::vector<std::size_t> idx{3, 17, 0, 40, 22, 9};
  AssembleOptions ao{Variant::lrc_weathernet, 32, &c.augment, c.frustum, c.grid, 7, 2, 1};
  const Batch one = assemble_batch(set, idx, st, ao);
  ao.workers = 3;
  const Batch three = assemble_batch(set, idx, st, ao);
  EXPECT_TRUE(bit_equal(one.primary, three.primary));
  EXPECT_TRUE(bit_equal(one.camera, three.camera));
  EXPECT_EQ(one.labels, three.labels);
  ao.epoch = 3;
  EXPECT_FALSE(bit_equal(one.camera, assemble_batch(set, idx, st, ao).camera));
}

TEST_F(SmallData, UnaugmentedBatchIsNormalizedRaster) {
  const RunConfig c = small_config(Variant::lidar_only);
  PrepareOptions po{c.frustum, c.grid, Variant::lidar_only, false, false, 1};
  const auto set = prepare(data_->val, po);
  NormStats st;
  st.lidar_mean = {2.0f};
  st.lidar_std = {4.0f};
  const std::size_t idx[1] = {5};
  AssembleOptions ao{Variant::lidar_only, 32, nullptr, c.frustum, c.grid, 7, 0, 1};
  const Batch b = assemble_batch(set, idx, st, ao);
  for (std::size_t i = 0; i < 32 * 32; ++i) ASSERT_EQ(b.primary[i], (set.samples[5].lidar[i] - 2.0f) / 4.0f);
}

// ---------------------------------------------------------------------------
// Checkpoints

WeatherNet<float> small_model(Variant v) {
  WeatherNet<float> m(ModelSpec{v, 8, 16, std::string(kTinyCnnArch), 0.3});
  m.init(3);
  return m;
}

std::string rewrite_index(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  std::size_t blob_start = 0;
  auto index = read_checkpoint_index(bytes, "test", &blob_start);
  edit(index);
  const std::string idx = index.dump();
  std::string out = bytes.substr(0, 8);
  detail::put_u64(out, idx.size());
  return out + idx + bytes.substr(blob_start);
}

TEST(CheckpointTest, RoundTripRestoresEverything) {
  TempDir tmp("ckpt");
  auto model = small_model(Variant::lrc_weathernet);
  for (auto* p : model.params()) {
    p->m.fill(0.25f);
    p->v.fill(0.5f);
  }
  TrainingState st;
  st.epoch = 4;
  st.optimizer.lr = 1.5e-4;
  st.optimizer.step_count = 17;
  st.scheduler.best = 0.75;
  st.scheduler.bad_epochs = 2;
  save_checkpoint(tmp / "m.ckpt", model, st, {{"note", "x"}});
  EXPECT_FALSE(fs::exists(tmp.path() / "m.ckpt.tmp"));
  auto loaded = load_checkpoint(tmp / "m.ckpt");
  EXPECT_EQ(loaded.info.state.epoch, 4u);
  EXPECT_EQ(loaded.info.state.optimizer.lr, 1.5e-4);
  EXPECT_EQ(loaded.info.state.optimizer.step_count, 17u);
  EXPECT_EQ(loaded.info.state.scheduler.best, 0.75);
  EXPECT_EQ(loaded.info.state.scheduler.bad_epochs, 2);
  EXPECT_EQ(loaded.info.meta.at("note"), "x");
  const auto a = model.params(), b = loaded.model.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i]->value, b[i]->value)) << a[i]->name;
    EXPECT_TRUE(bit_equal(a[i]->m, b[i]->m));
    EXPECT_TRUE(bit_equal(a[i]->v, b[i]->v));
  }
  // Re-encoding the loaded model reproduces the file byte for byte.
  EXPECT_EQ(encode_checkpoint(loaded.model, loaded.info.state, loaded.info.meta), slurp(tmp / "m.ckpt"));
}

TEST(CheckpointTest, FreshSchedulerBestSurvivesAsInfinity) {
  auto model = small_model(Variant::radar_only);
  const auto loaded = decode_checkpoint(encode_checkpoint(model, {}, {}));
  EXPECT_TRUE(std::isinf(loaded.info.state.scheduler.best));
}

TEST(CheckpointTest, BadMagicRejected) {
  auto model = small_model(Variant::camera_only);
  std::string bytes = encode_checkpoint(model, {}, {});
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes, "x.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), DataError);
}

TEST(CheckpointTest, MissingTensorRejected) {
  auto model = small_model(Variant::camera_only);
  const auto bytes = rewrite_index(encode_checkpoint(model, {}, {}), [](nlohmann::json& j) {
    auto& t = j["tensors"];
    t.erase(t.begin());
  });
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("lacks tensor"), std::string::npos);
  }
}

TEST(CheckpointTest, ShapeMismatchRejected) {
  auto model = small_model(Variant::camera_only);
  const auto bytes = rewrite_index(encode_checkpoint(model, {}, {}), [](nlohmann::json& j) { j["model"]["feature_dim"] = 16; });
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("has shape"), std::string::npos);
  }
}

TEST(CheckpointTest, UnknownArchitectureAndVersionRejected) {
  auto model = small_model(Variant::camera_only);
  const auto base = encode_checkpoint(model, {}, {});
  EXPECT_THROW(decode_checkpoint(rewrite_index(base, [](nlohmann::json& j) { j["model"]["architecture"] = "resnet"; })),
               DataError);
  std::string v2 = base;
  v2[4] = 2;
  EXPECT_THROW(decode_checkpoint(v2), DataError);
}

// ---------------------------------------------------------------------------
// Training and evaluation

TEST(History, CsvIsExactAndHeaded) {
  TempDir tmp("hist");
  write_history_csv(tmp / "h.csv", {{1, 0.1, 0.5, 0.2, 0.25, 3e-4}});
  const auto lines = lines_of(slurp(tmp / "h.csv"));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], kHistoryHeader);
  EXPECT_EQ(lines[1], "1,0.10000000000000001,0.5,0.20000000000000001,0.25,0.00029999999999999997");
  EXPECT_EQ(std::stod(exact_decimal(0.1 + 0.2)), 0.1 + 0.2);
}

TEST_F(SmallData, TwoEpochsWriteHistoryAndLoadableCheckpoints) {
  TempDir run("run");
  const RunConfig cfg = small_config(Variant::lrc_weathernet);
  std::size_t calls = 0;
  const auto r = train(cfg, data_->train, data_->val, run.path(), [&](const HistoryRow&, double) { ++calls; });
  EXPECT_EQ(calls, 2u);
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.history[0].epoch, 1u);
  EXPECT_EQ(r.history[0].lr, 3e-4);
  const auto lines = lines_of(slurp(run / "history.csv"));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], kHistoryHeader);
  for (const char* f : {"best.ckpt", "last.ckpt", "config.json"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_LE(r.best_epoch, 2u);
  auto last = load_checkpoint(r.last_checkpoint);
  EXPECT_EQ(last.info.state.epoch, 2u);
  EXPECT_EQ(last.info.spec.feature_dim, 8u);
  EXPECT_EQ(last.info.state.optimizer.step_count, 2u * 7u);  // 54 samples in batches of 8
  // The echoed config is the fully resolved one.
  EXPECT_EQ(nlohmann::json::parse(slurp(run / "config.json")), to_json(cfg));
  EXPECT_EQ(config_of(last.info).model.variant, Variant::lrc_weathernet);
}

TEST_F(SmallData, SameSeedTrainsBitIdentically) {
  TempDir a("runa"), b("runb"), c("runc");
  RunConfig cfg = small_config(Variant::early_fusion);
  train(cfg, data_->train, data_->val, a.path());
  train(cfg, data_->train, data_->val, b.path());
  EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
  EXPECT_EQ(slurp(a / "last.ckpt"), slurp(b / "last.ckpt"));
  EXPECT_EQ(slurp(a / "best.ckpt"), slurp(b / "best.ckpt"));
  cfg.train.seed = 8;
  train(cfg, data_->train, data_->val, c.path());
  EXPECT_NE(slurp(a / "history.csv"), slurp(c / "history.csv"));
}

TEST_F(SmallData, WorkerCountDoesNotChangeTraining) {
  TempDir a("w1"), b("w3");
  RunConfig cfg = small_config(Variant::lrc_weathernet);
  cfg.train.epochs = 1;
  train(cfg, data_->train, data_->val, a.path());
  cfg.train.workers = 3;
  train(cfg, data_->train, data_->val, b.path());
  EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
  // Weights agree; only the echoed worker count differs.
  auto la = load_checkpoint(a / "last.ckpt"), lb = load_checkpoint(b / "last.ckpt");
  const auto pa = la.model.params(), pb = lb.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_equal(pa[i]->value, pb[i]->value)) << pa[i]->name;
}

TEST_F(SmallData, EmptyManifestsRejected) {
  TempDir run("empty");
  Manifest empty;
  EXPECT_THROW(train(small_config(Variant::lidar_only), empty, data_->val, run.path()), DataError);
  EXPECT_THROW(train(small_config(Variant::lidar_only), data_->train, empty, run.path()), DataError);
}

TEST_F(SmallData, DivergenceAbortsWithLastGoodCheckpoint) {
  TempDir run("diverge");
  RunConfig cfg = small_config(Variant::lidar_only);
  cfg.train.lr = 1e30;
  cfg.train.epochs = 5;
  cfg.train.clip_max_norm = 1e30;
  EXPECT_THROW(train(cfg, data_->train, data_->val, run.path()), NumericError);
  ASSERT_TRUE(fs::exists(run / "last.ckpt"));
  auto ckpt = load_checkpoint(run / "last.ckpt");
  for (auto* p : ckpt.model.params())
    for (float v : p->value.vec()) ASSERT_TRUE(std::isfinite(v)) << p->name;
}

TEST_F(SmallData, OverfitsSixteenSamples) {
  TempDir run("overfit");
  Manifest subset = data_->train;
  subset.entries.resize(16);
  RunConfig cfg = small_config(Variant::lrc_weathernet);
  cfg.train.epochs = 200;
  cfg.augment.camera.enabled = false;
  cfg.augment.radar.enabled = false;
  cfg.train.lr = 3e-3;
  train(cfg, subset, subset, run.path());
  const auto rep = evaluate(run / "last.ckpt", subset);
  EXPECT_EQ(rep.accuracy, 1.0);
}

TEST_F(SmallData, EvaluateIsReproducibleAndLeavesCheckpointUntouched) {
  TempDir run("eval");
  train(small_config(Variant::lrc_weathernet), data_->train, data_->val, run.path());
  const std::string before = slurp(run / "best.ckpt");
  EvalOptions opt;
  opt.gates_csv = run / "gates.csv";
  opt.confusion_csv = run / "confusion.csv";
  opt.gate_vectors = run / "gates.bevt";
  const EvalReport a = evaluate(run / "best.ckpt", data_->test, opt);
  opt.workers = 2;
  const EvalReport b = evaluate(run / "best.ckpt", data_->test, opt);
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(run / "best.ckpt"), before);
  EXPECT_EQ(a.confusion.total(), 18);
  for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(a.confusion.support(c), 2);
  EXPECT_EQ(a.accuracy, static_cast<double>(a.confusion.trace()) / 18.0);
  auto reloaded = load_checkpoint(run / "best.ckpt");
  EXPECT_EQ(a.params, count_params(reloaded.model));

  const auto gates = lines_of(slurp(run / "gates.csv"));
  ASSERT_EQ(gates.size(), 19u);
  EXPECT_EQ(gates[0], "sample_id,label,prediction,summary_f,summary_c");
  EXPECT_EQ(read_tensor(run / "gates.bevt").shape(), (Shape{18, 16}));
  EXPECT_EQ(lines_of(slurp(run / "confusion.csv")).size(), 10u);

  EXPECT_THROW(evaluate(run / "best.ckpt", Manifest{}), DataError);
}

TEST_F(SmallData, GateMapsExported) {
  TempDir run("maps");
  RunConfig cfg = small_config(Variant::lrc_weathernet);
  cfg.train.epochs = 1;
  train(cfg, data_->train, data_->val, run.path());
  auto ckpt = load_checkpoint(run / "last.ckpt");
  export_gate_maps(ckpt, data_->test, run / "maps", 3);
  std::size_t n = 0;
  for (const auto& f : fs::directory_iterator(run / "maps")) {
    const auto t = read_tensor(f.path());
    EXPECT_TRUE(t.rank() == 1 || t.rank() == 4);
    ++n;
  }
  EXPECT_EQ(n, 6u);
  auto uni = load_checkpoint(run / "last.ckpt");
  auto camera_model = small_model(Variant::camera_only);
  uni.model = camera_model;
  EXPECT_THROW(export_gate_maps(uni, data_->test, run / "maps2", 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Latency and cost

TEST(Latency, SingleMeasurementIsTheMean) {
  const auto s = summarize_latency({3.25});
  EXPECT_EQ(s.mean, 3.25);
  EXPECT_EQ(s.p50, 3.25);
  EXPECT_EQ(s.p95, 3.25);
}

TEST(Latency, NearestRankPercentiles) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::reverse(v.begin(), v.end());
  const auto s = summarize_latency(v);
  EXPECT_EQ(s.p50, 50.0);
  EXPECT_EQ(s.p95, 95.0);
  EXPECT_EQ(s.mean, 50.5);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 100.0);
  EXPECT_EQ(s.samples_ms.size(), 100u);
}

TEST(Latency, BenchMeanWithinRawRange) {
  auto model = small_model(Variant::lrc_weathernet);
  const auto s = bench_latency(model, 2, 25);
  ASSERT_EQ(s.samples_ms.size(), 25u);
  const auto [lo, hi] = std::minmax_element(s.samples_ms.begin(), s.samples_ms.end());
  EXPECT_GE(s.mean, *lo);
  EXPECT_LE(s.mean, *hi);
  EXPECT_LE(s.p50, s.p95);
  EXPECT_THROW(bench_latency(model, 0, 0), ConfigError);
}

TEST(Latency, TinyCnnD64ForwardUnder100ms) {
  WeatherNet<float> model(ModelSpec{Variant::camera_only, 64, 224, std::string(kTinyCnnArch), 0.3});
  model.init(1);
  const auto s = bench_latency(model, 3, 10);
  EXPECT_LT(s.mean, 100.0);
}

TEST(Cost, LrcIsTwoBackbonesPlusHead) {
  WeatherNet<float> lrc(ModelSpec{Variant::lrc_weathernet, 64, 224, std::string(kTinyCnnArch), 0.3});
  WeatherNet<float> cam(ModelSpec{Variant::camera_only, 64, 224, std::string(kTinyCnnArch), 0.3});
  const auto c = report_model_cost(lrc);
  // Both backbones read three planes: the gated variant's primary input is the fused BEV grid.
  const std::uint64_t backbone = 23'584, head = 96'521;
  EXPECT_EQ(c.params, 2 * backbone + head);
  EXPECT_EQ(report_model_cost(cam).params, backbone + 38'921);
  EXPECT_DOUBLE_EQ(c.gmac(), static_cast<double>(c.macs) / 1e9);
}

}  // namespace
}  // namespace lrcw
