#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pixrec/data.hpp"
#include "pixrec/image.hpp"

namespace pixrec {

/// 10 log10((K-1)^2 / MSE) over all sub-pixels on the level scale;
/// +infinity for identical images.
double psnr(const QuantizedImage& a, const QuantizedImage& b);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
};

/// Mean SSIM over every position where the Gaussian window fits, averaged
/// over channels. Dynamic range K-1 on the level scale.
double ssim(const QuantizedImage& a, const QuantizedImage& b, const SsimOptions& opts = {});

struct MsSsimOptions {
  SsimOptions ssim;
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  /// Halving stops once a side would drop below this.
  std::size_t min_side = 8;
};

/// Number of scales ms_ssim uses for an h x w image.
std::size_t ms_ssim_scales(std::size_t h, std::size_t w, const MsSsimOptions& opts = {});

/// Contrast-structure means at the finer scales and full SSIM at the
/// coarsest, combined with the leading weights renormalised to sum to one.
/// Scales come from 2x2 average pooling; the window shrinks to the largest
/// odd size that fits a small scale. Negative terms are clamped to 0.
double ms_ssim(const QuantizedImage& a, const QuantizedImage& b, const MsSsimOptions& opts = {});

/// MSE on the [0, 1] scale between x and the bicubic downsample of y_hat.
double consistency(const QuantizedImage& x, const QuantizedImage& y_hat);

/// Target of the training pair whose input is nearest to x in L2; ties go
/// to the lowest index.
QuantizedImage nearest_neighbor_baseline(const QuantizedImage& x, const PairedDataset& train);
std::size_t nearest_neighbor_index(const QuantizedImage& x, const PairedDataset& train);

/// Bicubic upsample of x to out_h x out_w, requantized.
QuantizedImage bicubic_baseline(const QuantizedImage& x, std::size_t out_h, std::size_t out_w);

enum class CornerClass { exclusive_tl, exclusive_br, both, neither };
std::string to_string(CornerClass c);

struct CornerMass {
  double top_left = 0.0, bottom_right = 0.0;  // fractions of total intensity
};
CornerMass corner_mass(const QuantizedImage& sample);

/// exclusive_* when one quadrant holds >= threshold of the intensity, both
/// when each holds >= 1 - threshold, neither otherwise (including blank).
CornerClass corner_exclusivity(const QuantizedImage& sample, double threshold = 0.8);

struct ImageMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double consistency = 0.0;
  std::optional<double> nll_bits;
};

struct MetricsReport {
  std::string label;
  std::vector<ImageMetrics> images;
  double psnr_db = 0.0, ssim = 0.0, ms_ssim = 0.0, consistency = 0.0;
  std::optional<double> nll_bits;

  /// Recomputes the aggregates as means of the per-image values.
  void finalize();
  std::string to_text() const;
  /// Metric name -> aggregate plus a per-image array; infinite pSNR is "inf".
  std::string to_json() const;
};

/// Scores outputs against ground truth, with consistency against inputs.
MetricsReport evaluate_outputs(const std::vector<QuantizedImage>& inputs,
                               const std::vector<QuantizedImage>& outputs,
                               const std::vector<QuantizedImage>& truths,
                               const MsSsimOptions& opts = {});

}  // namespace pixrec
