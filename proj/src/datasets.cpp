#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include "pixrec/data.hpp"
#include "pixrec/errors.hpp"

namespace pixrec {

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

// Skeletons on a unit box, x to the right and y downward.
std::vector<Stroke> glyph(int digit) {
  constexpr double pi = 3.14159265358979323846;
  auto arc = [&](double cx, double cy, double rx, double ry, double a0, double a1, int n = 14) {
    Stroke s;
    for (int i = 0; i <= n; ++i) {
      const double a = (a0 + (a1 - a0) * i / n) * pi / 180.0;
      s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return s;
  };
  switch (digit) {
    case 0:
      return {arc(0.5, 0.5, 0.28, 0.4, 0, 360, 24)};
    case 1:
      return {{{0.35, 0.25}, {0.55, 0.1}, {0.55, 0.9}}};
    case 2:
      return {arc(0.5, 0.32, 0.26, 0.22, 190, 360), {{0.76, 0.32}, {0.24, 0.9}, {0.8, 0.9}}};
    case 3:
      return {arc(0.5, 0.3, 0.25, 0.2, 200, 450), arc(0.5, 0.7, 0.28, 0.2, 270, 520)};
    case 4:
      return {{{0.62, 0.9}, {0.62, 0.1}, {0.2, 0.65}, {0.82, 0.65}}};
    case 5:
      return {{{0.76, 0.1}, {0.3, 0.1}, {0.27, 0.45}}, arc(0.5, 0.66, 0.27, 0.24, 220, 500)};
    case 6:
      return {{{0.68, 0.1}, {0.3, 0.5}}, arc(0.5, 0.68, 0.24, 0.22, 0, 360, 20)};
    case 7:
      return {{{0.22, 0.1}, {0.8, 0.1}, {0.42, 0.9}}};
    case 8:
      return {arc(0.5, 0.3, 0.21, 0.19, 0, 360, 18), arc(0.5, 0.7, 0.26, 0.21, 0, 360, 18)};
    default:
      return {arc(0.5, 0.32, 0.24, 0.22, 0, 360, 20), {{0.74, 0.32}, {0.62, 0.9}}};
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

std::vector<RealImage> synthetic_digits(std::size_t count, std::uint64_t seed) {
  constexpr std::size_t side = 28;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<RealImage> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto strokes = glyph(pick(rng));
    const double scale = 18.0 * (1.0 + 0.1 * u(rng));
    const double slant = 0.2 * u(rng);
    const double ox = 14.0 + 1.5 * u(rng), oy = 14.0 + 1.5 * u(rng);
    const double width = 1.3 + 0.4 * u(rng);
    std::vector<Stroke> placed;
    for (const auto& s : strokes) {
      Stroke t;
      for (const auto& p : s) {
        const double y = (p.y - 0.5) * scale;
        t.push_back({ox + (p.x - 0.5) * scale * 0.8 - slant * y, oy + y});
      }
      placed.push_back(std::move(t));
    }
    RealImage img(side, side, 1);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const Point p{x + 0.5, y + 0.5};
        double d = 1e9;
        for (const auto& s : placed) {
          for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
        }
        img.at(y, x) = std::clamp(width - d + 0.5, 0.0, 1.0);
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

PairedDataset gen_mnist_corners(std::span<const RealImage> digits, const CornersConfig& cfg,
                                std::size_t count, std::uint64_t seed) {
  const std::size_t d = cfg.digit == 0 ? cfg.canvas / 2 : cfg.digit;
  if (cfg.canvas == 0 || d == 0 || 2 * d > cfg.canvas) {
    throw ConfigError("corners: digit side " + std::to_string(d) + " does not fit canvas " +
                      std::to_string(cfg.canvas));
  }
  if (digits.empty()) throw DataError("corners: no source digits");
  for (const auto& dg : digits) {
    if (dg.channels != 1) throw DataError("corners: source digits must be grayscale");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, digits.size() - 1);
  std::bernoulli_distribution coin(0.5);

  PairedDataset ds;
  const std::size_t centre = (cfg.canvas - d) / 2;
  for (std::size_t n = 0; n < count; ++n) {
    const RealImage small = bicubic_resize(digits[pick(rng)], d, d);
    Corner corner = coin(rng) ? Corner::bottom_right : Corner::top_left;
    if (cfg.forced_corner) corner = *cfg.forced_corner;
    const std::size_t off = corner == Corner::top_left ? 0 : cfg.canvas - d;
    RealImage x(cfg.canvas, cfg.canvas, 1), y(cfg.canvas, cfg.canvas, 1);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        x.at(centre + r, centre + c) = small.at(r, c);
        y.at(off + r, off + c) = small.at(r, c);
      }
    }
    ds.inputs.push_back(quantize(x, cfg.levels));
    ds.targets.push_back(quantize(y, cfg.levels));
    ds.tags.push_back(static_cast<int>(corner));
  }
  return ds;
}

void resize_inputs(PairedDataset& ds, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ConfigError("resize_inputs: size must be positive");
  for (auto& x : ds.inputs) x = quantize(bicubic_resize(dequantize(x), h, w), x.levels);
}

std::vector<RealImage> smooth_images(std::size_t count, std::size_t size, std::size_t channels,
                                     std::uint64_t seed) {
  if (size == 0 || channels == 0) throw ConfigError("smooth_images: size and channels must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RealImage> out;
  out.reserve(count);
  const double s = static_cast<double>(size);
  for (std::size_t n = 0; n < count; ++n) {
    RealImage img(size, size, channels);
    std::vector<double> base(channels), gx(channels), gy(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      base[c] = 0.2 + 0.6 * u(rng);
      gx[c] = 0.4 * (u(rng) - 0.5);
      gy[c] = 0.4 * (u(rng) - 0.5);
    }
    struct Blob {
      double cx, cy, r;
      std::vector<double> amp;
    };
    std::vector<Blob> blobs(3);
    for (auto& b : blobs) {
      b.cx = u(rng) * s;
      b.cy = u(rng) * s;
      b.r = (0.15 + 0.2 * u(rng)) * s;
      for (std::size_t c = 0; c < channels; ++c) b.amp.push_back(0.8 * (u(rng) - 0.5));
    }
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double fx = (x + 0.5) / s - 0.5, fy = (y + 0.5) / s - 0.5;
        for (std::size_t c = 0; c < channels; ++c) {
          double v = base[c] + gx[c] * fx + gy[c] * fy;
          for (const auto& b : blobs) {
            const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
            v += b.amp[c] * std::exp(-(dx * dx + dy * dy) / (2 * b.r * b.r));
          }
          img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

PairedDataset make_super_resolution_pairs(std::span<const RealImage> high_res, std::size_t low_h,
                                          std::size_t low_w, int levels) {
  PairedDataset ds;
  for (const auto& hr : high_res) {
    if (low_h > hr.height || low_w > hr.width) {
      throw ConfigError("super-resolution pairs: low-res size exceeds source size");
    }
    ds.inputs.push_back(quantize(bicubic_resize(hr, low_h, low_w), levels));
    ds.targets.push_back(quantize(hr, levels));
    ds.tags.push_back(-1);
  }
  return ds;
}

}  // namespace pixrec
