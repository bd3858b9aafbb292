#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pixrec/image.hpp"

namespace pixrec {

// ---------------------------------------------------------------------------
// Quantization

/// level = floor(v * K), clamped to [0, K-1]; inputs are clamped to [0, 1].
QuantizedImage quantize(const RealImage& img, int levels);
/// (level + 0.5) / K
RealImage dequantize(const QuantizedImage& img);

inline double dequantize_level(std::int32_t level, int levels) {
  return (static_cast<double>(level) + 0.5) / static_cast<double>(levels);
}

// ---------------------------------------------------------------------------
// Resampling

enum class ResampleKind { bicubic, nearest, box };

/// Separable reconstruction filter. Bicubic is the Keys kernel with parameter
/// `a` (-0.5 gives Catmull-Rom).
struct ResampleKernel {
  ResampleKind kind = ResampleKind::bicubic;
  double a = -0.5;

  double support() const;
  double operator()(double t) const;
};

/// Per-output-sample source taps along one axis. Downscaling widens the
/// filter by the scale factor (area-aware), and weights are renormalised so
/// they sum to one.
struct ResampleTaps {
  std::size_t first = 0;
  std::vector<double> weights;
};
std::vector<ResampleTaps> resample_taps(std::size_t in, std::size_t out, const ResampleKernel& k);

/// Resizes every channel; pass `clamp = std::nullopt` to keep filter overshoot.
RealImage resize(const RealImage& img, std::size_t out_h, std::size_t out_w,
                 const ResampleKernel& kernel = {},
                 std::optional<std::pair<double, double>> clamp = std::pair{0.0, 1.0});

inline RealImage bicubic_resize(const RealImage& img, std::size_t out_h, std::size_t out_w) {
  return resize(img, out_h, out_w, ResampleKernel{});
}

// ---------------------------------------------------------------------------
// 8-bit image files

struct Image8 {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<std::uint8_t> pixels;
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Binary PGM (P5, grayscale) or PPM (P6, RGB) with maxval 255.
Image8 parse_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image8& img);
Image8 load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image8& img);

/// Maps level l to the centre of its bin on the 0..255 scale, so that
/// from_image8(to_image8(q), K) == q for every K <= 256.
Image8 to_image8(const QuantizedImage& img);
QuantizedImage from_image8(const Image8& img, int levels);
RealImage image8_to_real(const Image8& img);

/// MNIST IDX image file (magic 0x00000803) as 8-bit grayscale images.
std::vector<Image8> read_idx_images(const std::filesystem::path& path);
/// MNIST IDX label file (magic 0x00000801).
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
std::vector<Image8> parse_idx_images(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Datasets

/// Pairs (x, y*) of conditioning input and target. `tags` carries an optional
/// per-pair label (the corner for MNIST-corners).
struct PairedDataset {
  std::vector<QuantizedImage> inputs;
  std::vector<QuantizedImage> targets;
  std::vector<int> tags;
  std::string split = "train";

  std::size_t size() const { return inputs.size(); }
};

enum class Corner { top_left = 0, bottom_right = 1 };

struct CornersConfig {
  std::size_t canvas = 32;
  /// Side of the digit after resizing; 0 means canvas / 2.
  std::size_t digit = 0;
  int levels = 4;
  /// Overrides the random corner choice.
  std::optional<Corner> forced_corner;
};

/// Each sample: x = digit centred on the canvas, y* = the same digit flush
/// against the top-left or bottom-right corner (fair coin). `digits` are
/// [0,1] grayscale sources of any size.
PairedDataset gen_mnist_corners(std::span<const RealImage> digits, const CornersConfig& cfg,
                                std::size_t count, std::uint64_t seed);

/// Replaces every input by its bicubic resize to h x w, requantized at the
/// input's own K.
void resize_inputs(PairedDataset& ds, std::size_t h, std::size_t w);

/// MNIST-like 28x28 stroke glyphs of the ten digits with random jitter,
/// usable when no IDX file is at hand.
std::vector<RealImage> synthetic_digits(std::size_t count, std::uint64_t seed);

/// Smooth random grayscale or colour images in [0,1] (sums of soft blobs over
/// a gradient), used as a stand-in for natural images.
std::vector<RealImage> smooth_images(std::size_t count, std::size_t size, std::size_t channels,
                                     std::uint64_t seed);

/// (bicubic downsample of y, y) pairs for super-resolution experiments.
PairedDataset make_super_resolution_pairs(std::span<const RealImage> high_res, std::size_t low_h,
                                          std::size_t low_w, int levels);

// ---------------------------------------------------------------------------
// Manifests: one "input_path<TAB>target_path" per line.

std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    std::span<const std::pair<std::string, std::string>> entries);

/// Loads every pair listed in a manifest; relative paths resolve against the
/// manifest's directory.
PairedDataset load_dataset(const std::filesystem::path& manifest, int levels);
/// Writes inputs/targets as PGM/PPM files next to a manifest.
void save_dataset(const PairedDataset& ds, const std::filesystem::path& dir,
                  const std::string& manifest_name = "manifest.tsv");

}  // namespace pixrec
