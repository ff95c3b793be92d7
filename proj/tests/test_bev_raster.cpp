#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "lrcw/bev_raster.hpp"
#include "test_util.hpp"

using namespace lrcw;

namespace {

/// Independent oracle: per point, find its cell and fold the max into a
/// sparse map; every cell absent from the map is 0.
template <class Point, std::size_t C, class Extract>
TensorF brute_force(const std::vector<Point>& cloud, const FrustumSpec& f, const GridSpec& g, Extract extract) {
  const auto h = static_cast<long>(std::ceil((f.x_max - f.x_min) / g.resolution - 1e-9));
  const auto w = static_cast<long>(std::ceil((f.y_max - f.y_min) / g.resolution - 1e-9));
  std::map<std::pair<long, long>, std::array<float, C>> cells;
  for (const auto& p : cloud) {
    if (!(p.x >= f.x_min && p.x < f.x_max && p.y >= f.y_min && p.y < f.y_max)) continue;
    const long r = std::clamp(static_cast<long>(std::floor((p.x - f.x_min) / g.resolution)), 0L, h - 1);
    const long c = std::clamp(static_cast<long>(std::floor((p.y - f.y_min) / g.resolution)), 0L, w - 1);
    const auto v = extract(p);
    auto [it, fresh] = cells.try_emplace({r, c}, v);
    if (!fresh)
      for (std::size_t k = 0; k < C; ++k) it->second[k] = std::max(it->second[k], v[k]);
  }
  TensorF out({C, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (const auto& [rc, v] : cells)
    for (std::size_t k = 0; k < C; ++k)
      out[(k * static_cast<std::size_t>(h) + static_cast<std::size_t>(rc.first)) * static_cast<std::size_t>(w) +
          static_cast<std::size_t>(rc.second)] = v[k];
  return out;
}

LidarCloud random_lidar(Rng& rng, std::size_t n) {
  LidarCloud c(n);
  for (auto& p : c)
    p = {static_cast<float>(uniform(rng, -5, 55)), static_cast<float>(uniform(rng, -30, 30)),
         static_cast<float>(uniform(rng, -2, 2)), static_cast<float>(uniform(rng, 0, 1))};
  return c;
}

RadarCloud random_radar(Rng& rng, std::size_t n) {
  RadarCloud c(n);
  for (auto& p : c)
    p = {static_cast<float>(uniform(rng, -5, 55)), static_cast<float>(uniform(rng, -30, 30)),
         static_cast<float>(uniform(rng, -2, 2)), static_cast<float>(uniform(rng, -10, 30)),
         static_cast<float>(uniform(rng, -20, 10))};
  return c;
}

float at(const TensorF& t, std::size_t c, std::size_t r, std::size_t col) {
  return t[(c * t.dim(1) + r) * t.dim(2) + col];
}

}  // namespace

TEST(Frustum, KeepsOnlyInside) {
  const LidarCloud cloud = {{10, 0, 0, 1}, {60, 0, 0, 1}, {10, -30, 0, 1}};
  const auto out = frustum_filter(cloud, FrustumSpec{});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].x, 10.0f);
  EXPECT_TRUE(frustum_filter(LidarCloud{}, FrustumSpec{}).empty());
}

TEST(Frustum, HalfOpenBounds) {
  const LidarCloud cloud = {{0, -25, 0, 1}, {50, 0, 0, 1}, {10, 25, 0, 1}};
  const auto out = frustum_filter(cloud, FrustumSpec{});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (LidarPoint{0, -25, 0, 1}));
}

TEST(Frustum, Idempotent) {
  Rng rng(2);
  const auto cloud = random_lidar(rng, 2000);
  const auto once = frustum_filter(cloud, FrustumSpec{});
  EXPECT_EQ(frustum_filter(once, FrustumSpec{}), once);
}

TEST(Frustum, InvalidSpecRejected) {
  EXPECT_THROW(FrustumSpec({10, 10, -1, 1}).validate(), ConfigError);
  EXPECT_THROW(GridSpec({0.0, 224, 224}).validate(FrustumSpec{}), ConfigError);
}

TEST(Grid, DefaultRawDims) {
  EXPECT_EQ(GridSpec{}.raw_h(FrustumSpec{}), 500u);
  EXPECT_EQ(GridSpec{}.raw_w(FrustumSpec{}), 500u);
  EXPECT_EQ((GridSpec{0.3, 224, 224}.raw_h(FrustumSpec{})), 167u);  // ceil(166.67)
}

TEST(CellOf, Examples) {
  const FrustumSpec f;
  const GridSpec g;
  EXPECT_EQ(cell_of(25.0, 0.0, f, g), (Cell{250, 250}));
  EXPECT_EQ(cell_of(0.0, -25.0, f, g), (Cell{0, 0}));
  EXPECT_EQ(cell_of(49.999, 24.999, f, g), (Cell{499, 499}));
  EXPECT_EQ(cell_of(50.0, 25.0, f, g), (Cell{499, 499}));  // clamp as defense in depth
}

TEST(RasterLidar, MaxWithinCell) {
  const LidarCloud cloud = {{10.01f, 0.01f, 0, 0.3f}, {10.02f, 0.02f, 0, 0.8f}};
  const auto g = rasterize_lidar(cloud);
  EXPECT_EQ(g.tensor.shape(), (Shape{1, 500, 500}));
  EXPECT_EQ(at(g.tensor, 0, 100, 250), 0.8f);
  EXPECT_EQ(g.channels, kLidarChannels);
}

TEST(RasterLidar, EmptyCloudAllZero) {
  const auto g = rasterize_lidar(LidarCloud{});
  EXPECT_TRUE(std::all_of(g.tensor.vec().begin(), g.tensor.vec().end(), [](float v) { return v == 0.0f; }));
}

TEST(RasterLidar, NegativeIntensityNamesPointIndex) {
  const LidarCloud cloud = {{1, 1, 0, 0.2f}, {2, 2, 0, 0.1f}, {3, 3, 0, -0.5f}};
  try {
    (void)rasterize_lidar(cloud);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("point 2"), std::string::npos) << e.what();
  }
}

TEST(RasterRadar, SinglePoint) {
  const RadarCloud cloud = {{25.0f, 0.0f, 0.0f, 12.5f, -3.0f}};
  const auto g = rasterize_radar(cloud);
  EXPECT_EQ(g.tensor.shape(), (Shape{2, 500, 500}));
  EXPECT_EQ(at(g.tensor, 0, 250, 250), 12.5f);
  EXPECT_EQ(at(g.tensor, 1, 250, 250), -3.0f);
  double total = 0;
  for (float v : g.tensor.vec()) total += std::abs(v);
  EXPECT_EQ(total, 15.5);
}

TEST(RasterRadar, NegativeMaximaKeptInOccupiedCells) {
  const RadarCloud cloud = {{5.0f, 5.0f, 0, -8.0f, -9.0f}, {5.01f, 5.01f, 0, -6.0f, -12.0f}};
  const auto g = rasterize_radar(cloud);
  const Cell c = cell_of(5.0, 5.0, FrustumSpec{}, GridSpec{});
  EXPECT_EQ(at(g.tensor, 0, c.row, c.col), -6.0f);
  EXPECT_EQ(at(g.tensor, 1, c.row, c.col), -9.0f);
  EXPECT_EQ(at(g.tensor, 0, 0, 0), 0.0f);
}

TEST(RasterRadar, EmptyCloudAllZero) {
  const auto g = rasterize_radar(RadarCloud{});
  EXPECT_EQ(g.tensor.shape(), (Shape{2, 500, 500}));
  EXPECT_TRUE(std::all_of(g.tensor.vec().begin(), g.tensor.vec().end(), [](float v) { return v == 0.0f; }));
}

TEST(RasterOracle, ThousandPointsMatchBruteForce) {
  Rng rng(17);
  const auto l = random_lidar(rng, 1000);
  const auto r = random_radar(rng, 1000);
  const FrustumSpec f;
  const GridSpec g;
  EXPECT_TRUE(rasterize_lidar(l, f, g).tensor.bit_equal(
      brute_force<LidarPoint, 1>(l, f, g, [](const LidarPoint& p) { return std::array<float, 1>{p.intensity}; })));
  EXPECT_TRUE(rasterize_radar(r, f, g).tensor.bit_equal(
      brute_force<RadarPoint, 2>(r, f, g, [](const RadarPoint& p) { return std::array<float, 2>{p.snr, p.rcs}; })));
}

TEST(RasterOracle, NonDefaultGeometry) {
  Rng rng(19);
  const FrustumSpec f{-10, 30, -12.5, 7.5};
  const GridSpec g{0.25, 64, 64};
  for (int trial = 0; trial < 10; ++trial) {
    const auto l = random_lidar(rng, 3000);
    EXPECT_TRUE(rasterize_lidar(l, f, g).tensor.bit_equal(
        brute_force<LidarPoint, 1>(l, f, g, [](const LidarPoint& p) { return std::array<float, 1>{p.intensity}; })));
  }
}

TEST(RasterInvariants, PermutationInvariant) {
  Rng rng(23);
  auto l = random_lidar(rng, 5000);
  auto r = random_radar(rng, 5000);
  const auto gl = rasterize_lidar(l).tensor;
  const auto gr = rasterize_radar(r).tensor;
  std::shuffle(l.begin(), l.end(), rng);
  std::shuffle(r.begin(), r.end(), rng);
  EXPECT_TRUE(rasterize_lidar(l).tensor.bit_equal(gl));
  EXPECT_TRUE(rasterize_radar(r).tensor.bit_equal(gr));
}

TEST(Resize, TwoByTwoToOne) {
  const TensorF src({1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  const TensorF out = resize_bilinear(src, 1, 1);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 1.5f);
}

TEST(Resize, IdentityIsBitExact) {
  Rng rng(4);
  const auto src = test::random_tensor<float>({3, 17, 23}, rng, -5, 5);
  EXPECT_TRUE(resize_bilinear(src, 17, 23).bit_equal(src));
}

TEST(Resize, ConstantStaysExact) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{224, 224}, {7, 3}, {1, 1}, {600, 13}}) {
    const TensorF src({2, 50, 40}, 0.123456f);
    const TensorF out = resize_bilinear(src, h, w);
    EXPECT_TRUE(std::all_of(out.vec().begin(), out.vec().end(), [](float v) { return v == 0.123456f; }));
  }
}

TEST(Resize, UpsampleMatchesHalfPixelFormula) {
  // 2 -> 4 along x: s = (d + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25 -> clamp.
  const TensorF src({1, 1, 2}, std::vector<float>{0, 4});
  const TensorF out = resize_bilinear(src, 1, 4);
  EXPECT_FLOAT_EQ(out[0], 0.0f);
  EXPECT_FLOAT_EQ(out[1], 1.0f);
  EXPECT_FLOAT_EQ(out[2], 3.0f);
  EXPECT_FLOAT_EQ(out[3], 4.0f);
}

TEST(Resize, OutputWithinInputRange) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto h0 = 1 + static_cast<std::size_t>(uniform01(rng) * 40);
    const auto w0 = 1 + static_cast<std::size_t>(uniform01(rng) * 40);
    const auto src = test::random_tensor<float>({2, h0, w0}, rng, -100, 100);
    const auto out = resize_bilinear(src, 1 + static_cast<std::size_t>(uniform01(rng) * 60),
                                     1 + static_cast<std::size_t>(uniform01(rng) * 60));
    for (std::size_t c = 0; c < 2; ++c) {
      const auto in_c = channel_slice(src, c, 1), out_c = channel_slice(out, c, 1);
      const auto [lo, hi] = std::minmax_element(in_c.vec().begin(), in_c.vec().end());
      for (float v : out_c.vec()) {
        EXPECT_GE(v, *lo);
        EXPECT_LE(v, *hi);
      }
    }
  }
}

TEST(Normalize, PaperStatsExamples) {
  const TensorF lidar({1, 1, 1}, 0.0471f);
  EXPECT_EQ(normalize(lidar, norm_stats::kLidarMean, norm_stats::kLidarStd)[0], 0.0f);
  const TensorF radar({2, 1, 1}, std::vector<float>{0.0072f, 0.0040f});
  const TensorF rn = normalize(radar, norm_stats::kRadarMean, norm_stats::kRadarStd);
  EXPECT_EQ(rn[0], 0.0f);
  EXPECT_EQ(rn[1], 0.0f);
  const TensorF one({1, 1, 1}, 0.2130f);
  EXPECT_NEAR(normalize(one, norm_stats::kLidarMean, norm_stats::kLidarStd)[0], 1.0f, 1e-6);
}

TEST(Normalize, Errors) {
  const TensorF t({2, 2, 2}, 1.0f);
  const std::array<float, 2> mean{0, 0}, bad{1, 0};
  EXPECT_THROW((void)normalize(t, mean, bad), ConfigError);
  EXPECT_THROW((void)normalize(t, norm_stats::kLidarMean, norm_stats::kLidarStd), ShapeError);
}

TEST(EarlyFuse, ChannelOrderAndSlicing) {
  const TensorF l({1, 224, 224}, 1.0f), r({2, 224, 224}, 2.0f);
  const TensorF f = early_fuse(l, r);
  EXPECT_EQ(f.shape(), (Shape{3, 224, 224}));
  EXPECT_EQ(at(f, 0, 5, 5), 1.0f);
  EXPECT_EQ(at(f, 1, 5, 5), 2.0f);
  EXPECT_EQ(at(f, 2, 223, 223), 2.0f);
  Rng rng(8);
  const auto lr = test::random_tensor<float>({1, 9, 7}, rng), rr = test::random_tensor<float>({2, 9, 7}, rng);
  const auto fr = early_fuse(lr, rr);
  EXPECT_TRUE(channel_slice(fr, 0, 1).bit_equal(lr));
  EXPECT_TRUE(channel_slice(fr, 1, 2).bit_equal(rr));
}

TEST(EarlyFuse, MismatchedDimsRejected) {
  EXPECT_THROW((void)early_fuse(TensorF({1, 224, 224}), TensorF({2, 200, 200})), ShapeError);
  EXPECT_THROW((void)early_fuse(TensorF({2, 8, 8}), TensorF({2, 8, 8})), ShapeError);
}

TEST(Pillars, SinglePointExample) {
  const LidarCloud cloud = {{1.05f, 0.22f, 0.3f, 0.7f}};
  const auto pillars = encode_pillars(cloud);
  ASSERT_EQ(pillars.size(), 1u);
  EXPECT_EQ(pillars[0].cell, (Cell{10, 252}));
  ASSERT_EQ(pillars[0].points.size(), 1u);
  const std::array<double, 9> want = {1.05, 0.22, 0.3, 0.7, 0, 0, 0, 0.0, -0.03};
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(pillars[0].points[0][k], want[k], 1e-6) << "feature " << k;
}

TEST(Pillars, IdenticalPointsHaveZeroOffsets) {
  const LidarCloud cloud = {{3.3f, -1.1f, 0.5f, 0.2f}, {3.3f, -1.1f, 0.5f, 0.2f}};
  const auto pillars = encode_pillars(cloud);
  ASSERT_EQ(pillars.size(), 1u);
  for (const auto& pf : pillars[0].points)
    for (std::size_t k = 4; k < 7; ++k) EXPECT_EQ(pf[k], 0.0f);
  EXPECT_TRUE(encode_pillars(LidarCloud{}).empty());
}

TEST(Pillars, OffsetsFromMeanSumToZero) {
  Rng rng(31);
  LidarCloud cloud;
  for (int i = 0; i < 4000; ++i)  // dense enough that most pillars hold several points
    cloud.push_back({static_cast<float>(uniform(rng, 10, 11)), static_cast<float>(uniform(rng, 0, 1)),
                     static_cast<float>(uniform(rng, -1, 1)), static_cast<float>(uniform01(rng))});
  const auto pillars = encode_pillars(cloud);
  std::size_t points = 0;
  for (const auto& p : pillars) {
    points += p.points.size();
    for (std::size_t k = 4; k < 7; ++k) {
      double s = 0.0;
      for (const auto& pf : p.points) s += pf[k];
      EXPECT_NEAR(s, 0.0, 1e-5);
    }
  }
  EXPECT_EQ(points, cloud.size());
}
