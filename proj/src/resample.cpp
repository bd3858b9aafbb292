#include <algorithm>
#include <cmath>
#include <string>

#include "pixrec/data.hpp"
#include "pixrec/errors.hpp"

namespace pixrec {

void QuantizedImage::validate() const {
  if (levels < 2) throw DataError("quantized image needs K >= 2, got " + std::to_string(levels));
  if (data.size() != height * width * channels) {
    throw DataError("quantized image buffer has " + std::to_string(data.size()) +
                    " entries for " + std::to_string(height) + "x" + std::to_string(width) +
                    "x" + std::to_string(channels));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] < 0 || data[i] >= levels) {
      throw DataError("level " + std::to_string(data[i]) + " at sub-pixel " + std::to_string(i) +
                      " outside [0," + std::to_string(levels) + ")");
    }
  }
}

QuantizedImage quantize(const RealImage& img, int levels) {
  if (levels < 2) throw ConfigError("quantize: K must be >= 2");
  QuantizedImage q(img.height, img.width, img.channels, levels);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const double v = std::clamp(img.values[i], 0.0, 1.0);
    const auto l = static_cast<std::int32_t>(std::floor(v * levels));
    q.data[i] = std::min(l, levels - 1);
  }
  return q;
}

RealImage dequantize(const QuantizedImage& img) {
  RealImage r(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    r.values[i] = dequantize_level(img.data[i], img.levels);
  }
  return r;
}

double ResampleKernel::support() const {
  switch (kind) {
    case ResampleKind::bicubic:
      return 2.0;
    case ResampleKind::nearest:
    case ResampleKind::box:
      return 0.5;
  }
  return 0.0;
}

double ResampleKernel::operator()(double t) const {
  switch (kind) {
    case ResampleKind::bicubic: {
      const double x = std::abs(t);
      if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
      if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
      return 0.0;
    }
    case ResampleKind::nearest:
    case ResampleKind::box:
      return (t >= -0.5 && t < 0.5) ? 1.0 : 0.0;
  }
  return 0.0;
}

std::vector<ResampleTaps> resample_taps(std::size_t in, std::size_t out,
                                        const ResampleKernel& k) {
  if (in == 0 || out == 0) throw ConfigError("resample: dimensions must be positive");
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  std::vector<ResampleTaps> taps(out);
  if (k.kind == ResampleKind::nearest) {
    for (std::size_t o = 0; o < out; ++o) {
      const double centre = (static_cast<double>(o) + 0.5) * scale;
      taps[o].first = std::min(static_cast<std::size_t>(centre), in - 1);
      taps[o].weights = {1.0};
    }
    return taps;
  }
  const double filter_scale = std::max(scale, 1.0);
  const double support = k.support() * filter_scale;
  for (std::size_t o = 0; o < out; ++o) {
    const double centre = (static_cast<double>(o) + 0.5) * scale;
    const auto lo = static_cast<long>(std::floor(centre - support));
    const auto hi = static_cast<long>(std::ceil(centre + support));
    const long first = std::max(lo, 0L);
    const long last = std::min(hi, static_cast<long>(in) - 1);
    std::vector<double> w;
    double total = 0.0;
    for (long j = first; j <= last; ++j) {
      const double v = k((static_cast<double>(j) + 0.5 - centre) / filter_scale);
      w.push_back(v);
      total += v;
    }
    // Trim zero-weight ends so taps stay compact.
    std::size_t b = 0, e = w.size();
    while (b < e && w[b] == 0.0) ++b;
    while (e > b && w[e - 1] == 0.0) --e;
    taps[o].first = static_cast<std::size_t>(first) + b;
    taps[o].weights.assign(w.begin() + static_cast<long>(b), w.begin() + static_cast<long>(e));
    for (double& v : taps[o].weights) v /= total;
  }
  return taps;
}

RealImage resize(const RealImage& img, std::size_t out_h, std::size_t out_w,
                 const ResampleKernel& kernel, std::optional<std::pair<double, double>> clamp) {
  if (out_h == 0 || out_w == 0) throw ConfigError("resize: output dims must be positive");
  if (img.height == 0 || img.width == 0) throw ConfigError("resize: empty input image");
  const std::size_t c = img.channels;
  const auto tx = resample_taps(img.width, out_w, kernel);
  const auto ty = resample_taps(img.height, out_h, kernel);

  RealImage horiz(img.height, out_w, c);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t j = 0; j < tx[x].weights.size(); ++j) {
          s += tx[x].weights[j] * img.at(y, tx[x].first + j, ch);
        }
        horiz.at(y, x, ch) = s;
      }
    }
  }
  RealImage out(out_h, out_w, c);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < ty[y].weights.size(); ++i) {
          s += ty[y].weights[i] * horiz.at(ty[y].first + i, x, ch);
        }
        out.at(y, x, ch) = clamp ? std::clamp(s, clamp->first, clamp->second) : s;
      }
    }
  }
  return out;
}

}  // namespace pixrec
