#include "pixrec/eval.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pixrec/errors.hpp"

namespace pixrec {

namespace {

void require_same(const QuantizedImage& a, const QuantizedImage& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DimensionError(std::string(what) + ": images are " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " and " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels));
  }
  if (a.levels != b.levels) {
    throw DimensionError(std::string(what) + ": images use K=" + std::to_string(a.levels) +
                         " and K=" + std::to_string(b.levels));
  }
}

// One channel of an image as reals.
struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

Plane channel_plane(const QuantizedImage& img, std::size_t c) {
  Plane p{img.height, img.width, std::vector<double>(img.height * img.width)};
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = img.data[i * img.channels + c];
  return p;
}

Plane pool2(const Plane& p) {
  Plane q{p.h / 2, p.w / 2, {}};
  q.v.resize(q.h * q.w);
  for (std::size_t y = 0; y < q.h; ++y)
    for (std::size_t x = 0; x < q.w; ++x)
      q.v[y * q.w + x] = (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                          p.at(2 * y + 1, 2 * x + 1)) / 4.0;
  return q;
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - mid;
    total += g[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering.
Plane filter(const Plane& p, const std::vector<double>& g) {
  const std::size_t n = g.size();
  Plane rows{p.h, p.w - n + 1, {}};
  rows.v.assign(rows.h * rows.w, 0.0);
  for (std::size_t y = 0; y < rows.h; ++y)
    for (std::size_t x = 0; x < rows.w; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * p.at(y, x + k);
      rows.v[y * rows.w + x] = s;
    }
  Plane out{p.h - n + 1, rows.w, {}};
  out.v.assign(out.h * out.w, 0.0);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * rows.at(y + k, x);
      out.v[y * out.w + x] = s;
    }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane p{a.h, a.w, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
  return p;
}

struct SsimTerms {
  double ssim = 0.0;  // mean of l * cs
  double cs = 0.0;    // mean of cs
};

SsimTerms ssim_terms(const Plane& a, const Plane& b, std::size_t window, const SsimOptions& o,
                     double range) {
  const auto g = gaussian_window(window, o.sigma);
  const Plane mu_a = filter(a, g), mu_b = filter(b, g);
  const Plane aa = filter(product(a, a), g), bb = filter(product(b, b), g), ab = filter(product(a, b), g);
  const double c1 = (o.k1 * range) * (o.k1 * range), c2 = (o.k2 * range) * (o.k2 * range);
  SsimTerms t;
  for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = aa.v[i] - ma * ma, vb = bb.v[i] - mb * mb, cov = ab.v[i] - ma * mb;
    const double l = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    const double cs = (2 * cov + c2) / (va + vb + c2);
    t.ssim += l * cs;
    t.cs += cs;
  }
  const double n = static_cast<double>(mu_a.v.size());
  t.ssim /= n;
  t.cs /= n;
  return t;
}

std::size_t fitting_window(std::size_t wanted, std::size_t h, std::size_t w) {
  std::size_t side = std::min({wanted, h, w});
  if (side % 2 == 0) --side;
  return side;
}

}  // namespace

double psnr(const QuantizedImage& a, const QuantizedImage& b) {
  require_same(a, b, "psnr");
  if (a.data.empty()) throw DimensionError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.data.size());
  const double peak = static_cast<double>(a.levels - 1);
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const QuantizedImage& a, const QuantizedImage& b, const SsimOptions& opts) {
  require_same(a, b, "ssim");
  if (a.height < opts.window || a.width < opts.window) {
    throw MetricError("ssim: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                      " image is smaller than the " + std::to_string(opts.window) + "x" +
                      std::to_string(opts.window) + " window");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    total += ssim_terms(channel_plane(a, c), channel_plane(b, c), opts.window, opts,
                        static_cast<double>(a.levels - 1)).ssim;
  }
  return total / static_cast<double>(a.channels);
}

std::size_t ms_ssim_scales(std::size_t h, std::size_t w, const MsSsimOptions& opts) {
  std::size_t scales = 1;
  while (scales < opts.weights.size() && std::min(h, w) / 2 >= opts.min_side) {
    h /= 2;
    w /= 2;
    ++scales;
  }
  return scales;
}

double ms_ssim(const QuantizedImage& a, const QuantizedImage& b, const MsSsimOptions& opts) {
  require_same(a, b, "ms_ssim");
  if (opts.weights.empty()) throw MetricError("ms_ssim: no scale weights");
  if (a.height < opts.ssim.window || a.width < opts.ssim.window) {
    throw MetricError("ms_ssim: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                      " image is smaller than the " + std::to_string(opts.ssim.window) + "x" +
                      std::to_string(opts.ssim.window) + " window");
  }
  const std::size_t scales = ms_ssim_scales(a.height, a.width, opts);
  const double weight_sum = std::accumulate(opts.weights.begin(), opts.weights.begin() + static_cast<long>(scales), 0.0);
  const double range = static_cast<double>(a.levels - 1);
  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    Plane pa = channel_plane(a, c), pb = channel_plane(b, c);
    double value = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
      const std::size_t window = fitting_window(opts.ssim.window, pa.h, pa.w);
      const SsimTerms t = ssim_terms(pa, pb, window, opts.ssim, range);
      const double term = s + 1 == scales ? t.ssim : t.cs;
      value *= std::pow(std::max(term, 0.0), opts.weights[s] / weight_sum);
      if (s + 1 < scales) {
        pa = pool2(pa);
        pb = pool2(pb);
      }
    }
    total += value;
  }
  return total / static_cast<double>(a.channels);
}

double consistency(const QuantizedImage& x, const QuantizedImage& y_hat) {
  if (x.channels != y_hat.channels) throw DimensionError("consistency: channel counts differ");
  if (x.height == 0 || x.width == 0 || y_hat.height % x.height != 0 || y_hat.width % x.width != 0 ||
      y_hat.height / x.height != y_hat.width / x.width) {
    throw DimensionError("consistency: " + std::to_string(y_hat.height) + "x" +
                         std::to_string(y_hat.width) + " output is not an integer upscale of " +
                         std::to_string(x.height) + "x" + std::to_string(x.width));
  }
  const RealImage lo = dequantize(x);
  const RealImage down = bicubic_resize(dequantize(y_hat), x.height, x.width);
  double se = 0.0;
  for (std::size_t i = 0; i < lo.values.size(); ++i) {
    const double d = lo.values[i] - down.values[i];
    se += d * d;
  }
  return se / static_cast<double>(lo.values.size());
}

std::size_t nearest_neighbor_index(const QuantizedImage& x, const PairedDataset& train) {
  if (train.size() == 0) throw DataError("nearest_neighbor_baseline: empty training set");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < train.size(); ++i) {
    const QuantizedImage& t = train.inputs[i];
    if (t.data.size() != x.data.size()) {
      throw DimensionError("nearest_neighbor_baseline: training input " + std::to_string(i) +
                           " differs in shape from the query");
    }
    double d = 0.0;
    for (std::size_t j = 0; j < x.data.size() && d < best_d; ++j) {
      const double e = static_cast<double>(x.data[j]) - static_cast<double>(t.data[j]);
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

QuantizedImage nearest_neighbor_baseline(const QuantizedImage& x, const PairedDataset& train) {
  return train.targets[nearest_neighbor_index(x, train)];
}

QuantizedImage bicubic_baseline(const QuantizedImage& x, std::size_t out_h, std::size_t out_w) {
  return quantize(bicubic_resize(dequantize(x), out_h, out_w), x.levels);
}

std::string to_string(CornerClass c) {
  switch (c) {
    case CornerClass::exclusive_tl: return "exclusive_tl";
    case CornerClass::exclusive_br: return "exclusive_br";
    case CornerClass::both: return "both";
    case CornerClass::neither: return "neither";
  }
  return "?";
}

CornerMass corner_mass(const QuantizedImage& s) {
  double total = 0.0, tl = 0.0, br = 0.0;
  const std::size_t hh = s.height / 2, hw = s.width / 2;
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double v = s.at(y, x, c);
        total += v;
        if (y < hh && x < hw) tl += v;
        if (y >= hh && x >= hw) br += v;
      }
  if (total <= 0.0) return {};
  return {tl / total, br / total};
}

CornerClass corner_exclusivity(const QuantizedImage& sample, double threshold) {
  if (!(threshold > 0.5 && threshold <= 1.0)) {
    throw ParameterError("corner_exclusivity: threshold must lie in (0.5, 1]");
  }
  const CornerMass m = corner_mass(sample);
  if (m.top_left >= threshold) return CornerClass::exclusive_tl;
  if (m.bottom_right >= threshold) return CornerClass::exclusive_br;
  if (m.top_left >= 1.0 - threshold && m.bottom_right >= 1.0 - threshold) return CornerClass::both;
  return CornerClass::neither;
}

void MetricsReport::finalize() {
  psnr_db = ssim = ms_ssim = consistency = 0.0;
  nll_bits.reset();
  if (images.empty()) return;
  const double n = static_cast<double>(images.size());
  bool all_nll = true;
  double nll = 0.0;
  for (const ImageMetrics& m : images) {
    psnr_db += m.psnr_db / n;
    ssim += m.ssim / n;
    ms_ssim += m.ms_ssim / n;
    consistency += m.consistency / n;
    if (m.nll_bits) nll += *m.nll_bits / n;
    else all_nll = false;
  }
  if (all_nll) nll_bits = nll;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "# metrics" << (label.empty() ? "" : " " + label) << ": " << images.size() << " images\n";
  os << "# ssim window 11x11 gaussian sigma 1.5, k1 0.01, k2 0.03; psnr on levels, peak K-1\n";
  os << "psnr_db " << fmt(psnr_db) << "\n";
  os << "ssim " << fmt(ssim) << "\n";
  os << "ms_ssim " << fmt(ms_ssim) << "\n";
  os << "consistency " << fmt(consistency) << "\n";
  if (nll_bits) os << "nll_bits " << fmt(*nll_bits) << "\n";
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["label"] = label;
  j["settings"] = {{"ssim_window", 11}, {"ssim_sigma", 1.5}, {"k1", 0.01}, {"k2", 0.03},
                   {"psnr_peak", "K-1"}, {"consistency_scale", "[0,1]"}};
  j["count"] = images.size();
  j["psnr_db"] = number(psnr_db);
  j["ssim"] = ssim;
  j["ms_ssim"] = ms_ssim;
  j["consistency"] = consistency;
  if (nll_bits) j["nll_bits"] = *nll_bits;
  j["images"] = nlohmann::json::array();
  for (const ImageMetrics& m : images) {
    nlohmann::json e = {{"psnr_db", number(m.psnr_db)},
                        {"ssim", m.ssim},
                        {"ms_ssim", m.ms_ssim},
                        {"consistency", m.consistency}};
    if (m.nll_bits) e["nll_bits"] = *m.nll_bits;
    j["images"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

MetricsReport evaluate_outputs(const std::vector<QuantizedImage>& inputs,
                               const std::vector<QuantizedImage>& outputs,
                               const std::vector<QuantizedImage>& truths, const MsSsimOptions& opts) {
  if (inputs.size() != outputs.size() || outputs.size() != truths.size()) {
    throw DataError("evaluate_outputs: " + std::to_string(inputs.size()) + " inputs, " +
                    std::to_string(outputs.size()) + " outputs, " + std::to_string(truths.size()) +
                    " ground-truth images");
  }
  MetricsReport r;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    ImageMetrics m;
    m.psnr_db = psnr(outputs[i], truths[i]);
    m.ssim = ssim(outputs[i], truths[i], opts.ssim);
    m.ms_ssim = ms_ssim(outputs[i], truths[i], opts);
    m.consistency = consistency(inputs[i], outputs[i]);
    r.images.push_back(m);
  }
  r.finalize();
  return r;
}

}  // namespace pixrec
