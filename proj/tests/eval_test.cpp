#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "pixrec/errors.hpp"
#include "pixrec/eval.hpp"
#include "metric_oracles.hpp"

namespace pixrec {
namespace {

using namespace pixrec::testing;

// ---- tests -----------------------------------------------------------------

TEST(PsnrTest, Examples) {
  std::mt19937_64 rng(1);
  const QuantizedImage a = random_image(8, 8, 3, 256, rng);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  QuantizedImage b = a;
  for (auto& v : b.data) v = v == 255 ? 254 : v + 1;
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-3);
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(255.0 * 255.0), 1e-12);
  EXPECT_THROW(psnr(a, QuantizedImage(8, 7, 3, 256)), DimensionError);
  EXPECT_THROW(psnr(a, QuantizedImage(8, 8, 3, 16)), DimensionError);
}

TEST(PsnrTest, MatchesOracleAndIsSymmetric) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto [a, b] = related_pair(12, t % 2 ? 3 : 1, 16 + t, rng);
    if (a == b) continue;
    EXPECT_NEAR(psnr(a, b), oracle_psnr(a, b), 1e-9);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
  }
}

TEST(SsimTest, Examples) {
  std::mt19937_64 rng(3);
  const QuantizedImage a = random_image(16, 16, 1, 256, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
  EXPECT_NEAR(ms_ssim(a, a), 1.0, 1e-9);
  const QuantizedImage flat(16, 16, 1, 256, 128);
  EXPECT_LT(std::abs(ssim(a, flat)), 0.1);
  EXPECT_THROW(ssim(QuantizedImage(10, 20, 1, 4), QuantizedImage(10, 20, 1, 4)), MetricError);
  EXPECT_THROW(ms_ssim(QuantizedImage(10, 20, 1, 4), QuantizedImage(10, 20, 1, 4)), MetricError);
}

TEST(SsimTest, MatchesDirectDefinition) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto [a, b] = related_pair(t % 3 == 0 ? 32 : 14, t % 2 ? 3 : 1, t % 4 ? 256 : 16, rng);
    ASSERT_NEAR(ssim(a, b), oracle_ssim(a, b), 1e-6) << t;
    ASSERT_EQ(ssim(a, b), ssim(b, a));
  }
}

TEST(MsSsimTest, ScalesAndSingleScaleCollapse) {
  EXPECT_EQ(ms_ssim_scales(32, 32), 3u);
  EXPECT_EQ(ms_ssim_scales(16, 16), 2u);
  EXPECT_EQ(ms_ssim_scales(11, 11), 1u);
  EXPECT_EQ(ms_ssim_scales(256, 256), 5u);
  std::mt19937_64 rng(5);
  MsSsimOptions single;
  single.weights = {1.0};
  for (int t = 0; t < 10; ++t) {
    const auto [a, b] = related_pair(20, 1, 64, rng);
    EXPECT_NEAR(ms_ssim(a, b, single), ssim(a, b), 1e-9);
  }
}

TEST(MsSsimTest, MatchesBruteForceAt32) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const auto [a, b] = related_pair(32, t % 2 ? 3 : 1, t % 5 ? 256 : 8, rng);
    ASSERT_NEAR(ms_ssim(a, b), oracle_ms_ssim_32(a, b), 1e-6) << t;
    const double ab = ms_ssim(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(ConsistencyTest, Examples) {
  const QuantizedImage x(4, 4, 1, 16, 9);
  const QuantizedImage y(16, 16, 1, 16, 9);
  // Normalised filter weights leave only rounding error.
  EXPECT_LT(consistency(x, y), 1e-28);
  EXPECT_THROW(consistency(x, QuantizedImage(16, 12, 1, 16)), DimensionError);
  EXPECT_THROW(consistency(x, QuantizedImage(15, 15, 1, 16)), DimensionError);

  const auto hr = smooth_images(20, 32, 1, 7);
  const PairedDataset ds = make_super_resolution_pairs(hr, 8, 8, 256);
  std::mt19937_64 rng(8);
  double bicubic = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    bicubic += consistency(ds.inputs[i], bicubic_baseline(ds.inputs[i], 32, 32)) / 20.0;
    noise += consistency(ds.inputs[i], random_image(32, 32, 1, 256, rng)) / 20.0;
  }
  EXPECT_LE(bicubic, 0.01);
  EXPECT_GE(noise, 10.0 * bicubic);
}

TEST(NearestNeighborTest, ExactTiesAndScan) {
  std::mt19937_64 rng(9);
  PairedDataset train;
  for (int i = 0; i < 100; ++i) {
    train.inputs.push_back(random_image(4, 4, 1, 8, rng));
    train.targets.push_back(random_image(8, 8, 1, 8, rng));
  }
  EXPECT_EQ(nearest_neighbor_baseline(train.inputs[37], train), train.targets[37]);

  PairedDataset tie;
  tie.inputs = {QuantizedImage(1, 1, 1, 8, 2), QuantizedImage(1, 1, 1, 8, 4)};
  tie.targets = {QuantizedImage(1, 1, 1, 8, 0), QuantizedImage(1, 1, 1, 8, 7)};
  EXPECT_EQ(nearest_neighbor_index(QuantizedImage(1, 1, 1, 8, 3), tie), 0u);

  for (int q = 0; q < 50; ++q) {
    const QuantizedImage x = random_image(4, 4, 1, 8, rng);
    std::size_t best = 0;
    long best_d = -1;
    for (std::size_t i = 0; i < train.size(); ++i) {
      long d = 0;
      for (std::size_t j = 0; j < x.data.size(); ++j) {
        const long e = x.data[j] - train.inputs[i].data[j];
        d += e * e;
      }
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = i;
      }
    }
    EXPECT_EQ(nearest_neighbor_index(x, train), best);
  }
  EXPECT_THROW(nearest_neighbor_baseline(train.inputs[0], PairedDataset{}), DataError);
}

TEST(CornerTest, Classification) {
  QuantizedImage tl(32, 32, 1, 4);
  for (std::size_t y = 2; y < 12; ++y)
    for (std::size_t x = 3; x < 9; ++x) tl.at(y, x) = 3;
  EXPECT_EQ(corner_exclusivity(tl), CornerClass::exclusive_tl);
  QuantizedImage split = tl;
  for (std::size_t y = 2; y < 12; ++y)
    for (std::size_t x = 3; x < 9; ++x) split.at(y + 16, x + 16) = 3;
  EXPECT_EQ(corner_exclusivity(split), CornerClass::both);
  EXPECT_EQ(corner_exclusivity(QuantizedImage(32, 32, 1, 4)), CornerClass::neither);
  QuantizedImage top_right(32, 32, 1, 4);
  for (std::size_t y = 2; y < 10; ++y)
    for (std::size_t x = 20; x < 28; ++x) top_right.at(y, x) = 2;
  EXPECT_EQ(corner_exclusivity(top_right), CornerClass::neither);

  const auto digits = synthetic_digits(50, 3);
  const PairedDataset ds = gen_mnist_corners(digits, CornersConfig{}, 50, 4);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const CornerClass c = corner_exclusivity(ds.targets[i]);
    EXPECT_EQ(c, ds.tags[i] == 0 ? CornerClass::exclusive_tl : CornerClass::exclusive_br) << i;
  }
}

TEST(ReportTest, AggregatesAndJson) {
  std::mt19937_64 rng(10);
  std::vector<QuantizedImage> xs, outs, truths;
  for (int i = 0; i < 3; ++i) {
    const auto [a, b] = related_pair(16, 1, 16, rng);
    outs.push_back(a);
    truths.push_back(i == 0 ? a : b);
    xs.push_back(bicubic_baseline(b, 4, 4));
  }
  MetricsReport r = evaluate_outputs(xs, outs, truths);
  EXPECT_TRUE(std::isinf(r.psnr_db));
  double mean_ssim = 0.0;
  for (const auto& m : r.images) mean_ssim += m.ssim / 3.0;
  EXPECT_NEAR(r.ssim, mean_ssim, 1e-15);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["psnr_db"], "inf");
  EXPECT_EQ(j["images"].size(), 3u);
  EXPECT_EQ(j["images"][0]["psnr_db"], "inf");
  EXPECT_NE(r.to_text().find("psnr_db inf"), std::string::npos);
}

}  // namespace
}  // namespace pixrec
