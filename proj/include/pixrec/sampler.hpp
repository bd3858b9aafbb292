#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pixrec/model.hpp"

namespace pixrec {

struct SamplePlan {
  enum class Mode { greedy, tempered };
  Mode mode = Mode::greedy;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::size_t num_samples = 1;

  static SamplePlan greedy() { return {}; }
  static SamplePlan tempered(double tau, std::uint64_t seed, std::size_t n = 1) {
    return {Mode::tempered, tau, seed, n};
  }
  /// Throws ParameterError for tau <= 0, ConfigError for zero samples.
  void validate() const;
};

/// p^(1/tau), renormalised. Zero entries stay zero.
std::vector<double> temper(std::span<const double> p, double tau);
/// softmax(logits / tau)
void tempered_softmax(std::span<const double> logits, double tau, std::span<double> out);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> v);

/// Inverse-CDF draw with one uniform u in [0, 1). The target u * total is
/// compared against the running sum, so rounding lands on a lower level.
std::size_t draw_categorical(std::span<const double> p, double u);

/// Counter-based generator: every (stream, counter) pair maps to an
/// independent uniform through SplitMix64 finalisers, so draws do not
/// depend on evaluation order.
///   key   = mix(seed ^ mix(stream + 1))
///   value = mix(key + golden * (counter + 1))
///   u     = (value >> 11) * 2^-53
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}
  static std::uint64_t mix(std::uint64_t z);
  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
  double uniform(std::uint64_t stream, std::uint64_t counter) const;

 private:
  std::uint64_t seed_;
};

/// Fused logits A_i(x) + B_i(y_<i) one sub-pixel at a time.
///
/// `logits(y, i, out)` requires that sub-pixels < i of `y` are final and
/// that calls come in increasing i for one image.
class StepDecoder {
 public:
  virtual ~StepDecoder() = default;
  virtual void logits(const QuantizedImage& y, std::size_t i, std::span<double> out) = 0;
};

/// Reference: full network forward at every step.
std::unique_ptr<StepDecoder> brute_force_decoder(const ModelBundle& bundle, const QuantizedImage& x);
/// Recomputes only the current pixel of every prior layer.
std::unique_ptr<StepDecoder> incremental_decoder(const ModelBundle& bundle, const QuantizedImage& x);

enum class DecoderKind { incremental, brute_force };

/// One image. `stream` selects the RNG stream (ignored in greedy mode).
QuantizedImage decode_image(const ModelBundle& bundle, const QuantizedImage& x,
                            const SamplePlan& plan, std::uint64_t stream,
                            DecoderKind decoder = DecoderKind::incremental);

/// plan.num_samples images; sample s uses stream s. The pixel_ce kind samples
/// every sub-pixel from A alone; the mse kind returns its quantized regression.
std::vector<QuantizedImage> sample_image(const ModelBundle& bundle, const QuantizedImage& x,
                                         const SamplePlan& plan, std::size_t workers = 1);

QuantizedImage greedy_decode(const ModelBundle& bundle, const QuantizedImage& x,
                             DecoderKind decoder = DecoderKind::incremental);

}  // namespace pixrec
