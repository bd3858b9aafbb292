#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "pixrec/data.hpp"
#include "pixrec/errors.hpp"

using namespace pixrec;

namespace {

double keys(double t) {
  const double a = -0.5, x = std::abs(t);
  if (x <= 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

// Full 2-D summation over every source pixel, normalised by the total weight.
double direct_bicubic(const RealImage& img, std::size_t out_h, std::size_t out_w, std::size_t oy,
                      std::size_t ox) {
  const double sy = double(img.height) / out_h, sx = double(img.width) / out_w;
  const double fy = std::max(sy, 1.0), fx = std::max(sx, 1.0);
  const double cy = (oy + 0.5) * sy, cx = (ox + 0.5) * sx;
  double num = 0, den = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double w = keys((y + 0.5 - cy) / fy) * keys((x + 0.5 - cx) / fx);
      num += w * img.at(y, x);
      den += w;
    }
  }
  return num / den;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pixrec_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(QuantizeTest, Endpoints) {
  RealImage img(1, 2, 1);
  img.values = {0.0, 1.0};
  for (int k : {2, 4, 256}) {
    const auto q = quantize(img, k);
    EXPECT_EQ(q.data[0], 0);
    EXPECT_EQ(q.data[1], k - 1);
  }
}

TEST(QuantizeTest, HalfAt256IsLevel128) {
  RealImage img(1, 1, 1, 0.5);
  EXPECT_EQ(quantize(img, 256).data[0], 128);
}

TEST(QuantizeTest, RoundtripWithinHalfBin) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k : {2, 4, 16, 256}) {
    RealImage img(1, 1000, 1);
    for (double& v : img.values) v = u(rng);
    const auto back = dequantize(quantize(img, k));
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      EXPECT_LE(std::abs(back.values[i] - img.values[i]), 0.5 / k + 1e-15);
    }
  }
}

TEST(QuantizeTest, RejectsSingleLevel) {
  EXPECT_THROW(quantize(RealImage(1, 1, 1), 1), ConfigError);
}

TEST(QuantizedImageTest, ValidateFlagsOutOfRangeLevel) {
  QuantizedImage q(2, 2, 1, 4);
  EXPECT_NO_THROW(q.validate());
  q.data[3] = 4;
  EXPECT_THROW(q.validate(), DataError);
}

TEST(BicubicTest, ConstantImageStaysConstant) {
  RealImage img(5, 7, 2, 0.37);
  for (auto [h, w] : {std::pair{10, 14}, std::pair{3, 2}, std::pair{5, 7}, std::pair{13, 4}}) {
    const auto out = bicubic_resize(img, h, w);
    for (double v : out.values) EXPECT_NEAR(v, 0.37, 1e-12);
  }
}

TEST(BicubicTest, UpThenDownOfConstantIsIdentical) {
  RealImage img(4, 4, 1, 0.8);
  const auto back = bicubic_resize(bicubic_resize(img, 12, 12), 4, 4);
  for (double v : back.values) EXPECT_NEAR(v, 0.8, 1e-12);
}

TEST(BicubicTest, RampMatchesDirectSummation) {
  RealImage ramp(4, 4, 1);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) ramp.at(y, x) = (y * 4 + x) / 15.0;
  }
  const auto up = resize(ramp, 8, 8, {}, std::nullopt);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      EXPECT_NEAR(up.at(y, x), direct_bicubic(ramp, 8, 8, y, x), 1e-9) << y << "," << x;
    }
  }
}

TEST(BicubicTest, DownscaleMatchesDirectSummation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RealImage img(12, 9, 1);
  for (double& v : img.values) v = u(rng);
  const auto out = resize(img, 5, 4, {}, std::nullopt);
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out.at(y, x), direct_bicubic(img, 5, 4, y, x), 1e-9);
  }
}

TEST(BicubicTest, KernelIsPartitionOfUnity) {
  const ResampleKernel k;
  for (double t = 0.0; t < 1.0; t += 0.0625) {
    double s = 0;
    for (int j = -3; j <= 3; ++j) s += k(t + j);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(BicubicTest, CommutesWithConstantShift) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RealImage img(6, 6, 3);
  for (double& v : img.values) v = u(rng);
  RealImage shifted = img;
  for (double& v : shifted.values) v += 0.25;
  const auto a = resize(img, 11, 9, {}, std::nullopt);
  const auto b = resize(shifted, 11, 9, {}, std::nullopt);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(b.values[i], a.values[i] + 0.25, 1e-9);
}

TEST(BicubicTest, DownOfUpIsNearOriginal) {
  for (const auto& img : smooth_images(8, 16, 3, 11)) {
    const auto back = bicubic_resize(bicubic_resize(img, 64, 64), 16, 16);
    double mse = 0;
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      mse += (back.values[i] - img.values[i]) * (back.values[i] - img.values[i]);
    }
    EXPECT_LE(mse / img.values.size(), 1e-3);
  }
}

TEST(BicubicTest, ClampsOvershoot) {
  RealImage step(1, 4, 1);
  step.values = {0, 0, 1, 1};
  const auto raw = resize(step, 1, 16, {}, std::nullopt);
  const auto clamped = bicubic_resize(step, 1, 16);
  bool overshoot = false;
  for (double v : raw.values) overshoot = overshoot || v < 0 || v > 1;
  EXPECT_TRUE(overshoot);
  for (double v : clamped.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(BicubicTest, RejectsZeroOutput) {
  EXPECT_THROW(bicubic_resize(RealImage(2, 2, 1), 0, 2), ConfigError);
}

TEST(PnmTest, ParsesHandBuiltP5) {
  const std::string text = "P5 2 2 255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), {0, 64, 128, 255});
  const auto img = parse_pnm(bytes);
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 64, 128, 255}));
}

TEST(PnmTest, SkipsComments) {
  const std::string text = "P6\n# made by hand\n1 1\n255\n\x01\x02\x03";
  const auto img = parse_pnm(std::vector<std::uint8_t>(text.begin(), text.end()));
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(PnmTest, TruncatedPayloadNamesByteCounts) {
  const std::string text = "P5 2 2 255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.insert(bytes.end(), {1, 2, 3});
  try {
    parse_pnm(bytes);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 4 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 11"), std::string::npos) << msg;
  }
}

TEST(PnmTest, BadMagicAndMaxval) {
  const std::string a = "P2 1 1 255\n0";
  EXPECT_THROW(parse_pnm(std::vector<std::uint8_t>(a.begin(), a.end())), ParseError);
  const std::string b = "P5 1 1 65535\n00";
  try {
    parse_pnm(std::vector<std::uint8_t>(b.begin(), b.end()));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 7"), std::string::npos) << e.what();
  }
}

TEST(PnmTest, SaveLoadRoundtripIsBitExact) {
  const auto dir = temp_dir("pnm");
  std::mt19937_64 rng(9);
  for (std::size_t c : {1u, 3u}) {
    Image8 img{5, 7, c, std::vector<std::uint8_t>(35 * c)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
    save_image(dir / "a.pnm", img);
    EXPECT_EQ(load_image(dir / "a.pnm"), img);
  }
}

TEST(PnmTest, LevelMappingRoundtripsForEveryK) {
  for (int k : {2, 3, 4, 7, 16, 100, 256}) {
    QuantizedImage q(1, static_cast<std::size_t>(k), 1, k);
    for (int l = 0; l < k; ++l) q.data[l] = l;
    EXPECT_EQ(from_image8(to_image8(q), k), q) << k;
  }
}

TEST(IdxTest, ParsesImagesAndRejectsBadMagic) {
  std::vector<std::uint8_t> bytes = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
  for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<std::uint8_t>(i * 10));
  const auto imgs = parse_idx_images(bytes);
  ASSERT_EQ(imgs.size(), 2u);
  EXPECT_EQ(imgs[1].height, 2u);
  EXPECT_EQ(imgs[1].width, 3u);
  EXPECT_EQ(imgs[1].pixels[0], 60);
  bytes[3] = 1;
  EXPECT_THROW(parse_idx_images(bytes), ParseError);
  bytes[3] = 3;
  bytes.pop_back();
  EXPECT_THROW(parse_idx_images(bytes), ParseError);
}

TEST(CornersTest, ForcedTopLeftKeepsMassInQuadrant) {
  const auto digits = synthetic_digits(20, 1);
  CornersConfig cfg;
  cfg.forced_corner = Corner::top_left;
  const auto ds = gen_mnist_corners(digits, cfg, 50, 2);
  for (const auto& y : ds.targets) {
    long total = 0;
    for (std::size_t r = 0; r < y.height; ++r) {
      for (std::size_t c = 0; c < y.width; ++c) {
        if (r >= 16 || c >= 16) {
          EXPECT_EQ(y.at(r, c), 0);
        }
        total += y.at(r, c);
      }
    }
    EXPECT_GT(total, 0);
  }
}

TEST(CornersTest, InputIsCentredDigit) {
  const auto digits = synthetic_digits(5, 4);
  CornersConfig cfg;
  cfg.forced_corner = Corner::bottom_right;
  const auto ds = gen_mnist_corners(digits, cfg, 5, 5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t c = 0; c < 16; ++c) {
        EXPECT_EQ(ds.inputs[i].at(8 + r, 8 + c), ds.targets[i].at(16 + r, 16 + c));
      }
    }
    EXPECT_EQ(ds.tags[i], static_cast<int>(Corner::bottom_right));
  }
}

TEST(CornersTest, SameSeedSameBytes) {
  const auto digits = synthetic_digits(10, 1);
  const auto a = gen_mnist_corners(digits, {}, 30, 77);
  const auto b = gen_mnist_corners(digits, {}, 30, 77);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.tags, b.tags);
  EXPECT_EQ(synthetic_digits(4, 9)[3].values, synthetic_digits(4, 9)[3].values);
}

TEST(CornersTest, CornerFrequencyIsFair) {
  const auto digits = synthetic_digits(4, 1);
  CornersConfig cfg;
  cfg.canvas = 8;
  const auto ds = gen_mnist_corners(digits, cfg, 10000, 123);
  double tl = 0;
  for (int t : ds.tags) tl += t == static_cast<int>(Corner::top_left);
  EXPECT_NEAR(tl / 10000.0, 0.5, 0.015);
}

TEST(CornersTest, CanvasTooSmall) {
  const auto digits = synthetic_digits(1, 1);
  CornersConfig cfg;
  cfg.canvas = 20;
  cfg.digit = 14;
  EXPECT_THROW(gen_mnist_corners(digits, cfg, 1, 1), ConfigError);
}

TEST(DatasetTest, ManifestRoundtrip) {
  const auto dir = temp_dir("manifest");
  const auto ds = make_super_resolution_pairs(smooth_images(3, 16, 3, 2), 8, 8, 16);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir / "manifest.tsv", 16);
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_EQ(back.targets, ds.targets);
}

TEST(DatasetTest, MalformedManifestLine) {
  const auto dir = temp_dir("bad_manifest");
  {
    std::ofstream(dir / "m.tsv") << "only_one_column\n";
  }
  EXPECT_THROW(read_manifest(dir / "m.tsv"), ParseError);
}
