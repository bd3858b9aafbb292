#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pixrec {

/// H x W x C real-valued image, row-major with interleaved channels.
struct RealImage {
  std::size_t height = 0, width = 0, channels = 1;
  std::vector<double> values;

  RealImage() = default;
  RealImage(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return values[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return values[(y * width + x) * channels + c];
  }
};

/// H x W x C grid of integer levels in [0, K).
///
/// Sub-pixel i = (y * W + x) * C + c is the raster-then-channel order used by
/// the autoregressive model.
struct QuantizedImage {
  std::size_t height = 0, width = 0, channels = 1;
  int levels = 256;  // K
  std::vector<std::int32_t> data;

  QuantizedImage() = default;
  QuantizedImage(std::size_t h, std::size_t w, std::size_t c, int k, std::int32_t fill = 0)
      : height(h), width(w), channels(c), levels(k), data(h * w * c, fill) {}

  std::size_t subpixels() const { return data.size(); }
  std::int32_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data[(y * width + x) * channels + c];
  }
  std::int32_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }

  /// Throws DataError unless K >= 2, the buffer matches the dims and every level < K.
  void validate() const;

  friend bool operator==(const QuantizedImage&, const QuantizedImage&) = default;
};

}  // namespace pixrec
