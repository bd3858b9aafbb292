#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pixrec/config.hpp"
#include "pixrec/data.hpp"
#include "pixrec/graph.hpp"
#include "pixrec/image.hpp"
#include "pixrec/layers.hpp"
#include "pixrec/tensor.hpp"

namespace pixrec {

/// pixel_recursive: conditioning + prior networks, fused softmax.
/// pixel_ce: conditioning network alone, independent softmax per sub-pixel.
/// mse: conditioning network regressing intensities (fixed-variance Gaussian).
enum class ModelKind { pixel_recursive, pixel_ce, mse };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::pixel_recursive;
  std::size_t in_h = 8, in_w = 8;
  std::size_t channels = 3;
  int levels = 256;
  /// Stride-2 transposed convolutions; output side = input side * 2^stages.
  std::size_t upsample_stages = 2;

  // Conditioning network
  std::size_t cond_width = 16;
  /// ResNet blocks before the first upsample and after each one.
  std::size_t cond_blocks = 2;

  // Prior network
  std::size_t prior_width = 24;
  std::size_t gated_blocks = 4;
  std::size_t first_kernel = 7;
  std::size_t gated_kernel = 5;
  std::size_t head_width = 48;
  /// Adds 1x1 projections of the conditioning features inside every gated block.
  bool cond_injection = true;

  /// mse kind: add the bicubic upsample of x to the regressed output.
  bool mse_residual = false;

  std::size_t out_h() const { return in_h << upsample_stages; }
  std::size_t out_w() const { return in_w << upsample_stages; }
  /// Sub-pixels per output image (M).
  std::size_t subpixels() const { return out_h() * out_w() * channels; }

  /// Throws ConfigError for inconsistent settings.
  void validate() const;

  KeyValues to_kv() const;
  /// Missing keys keep their defaults.
  static ModelConfig from_kv(const KeyValues& kv);
};

using ParamMap = std::map<std::string, Tensor>;

/// Raster-order masks of the prior network, derived from the config.
struct PriorMasks {
  Tensor first;
  GatedBlockMasks block;
  Tensor head1, head2;
  static PriorMasks build(const ModelConfig& cfg);
};

/// Architecture config and every parameter tensor, by name.
struct ModelBundle {
  ModelBundle() = default;
  /// All parameters zero.
  explicit ModelBundle(ModelConfig cfg);

  ModelConfig config;
  ParamMap params;
  PriorMasks masks;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Names and shapes of every parameter for `cfg`, in a fixed order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg);

/// Zero-filled tensors shaped like the bundle's parameters.
ParamMap zeros_like(const ParamMap& params);

// ---------------------------------------------------------------------------
// Graph-level networks

/// Hands out graph handles for bundle parameters, wiring gradients into
/// `grads` when given and treating parameters as constants otherwise.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ModelBundle& bundle, ParamMap* grads = nullptr);
  Var operator()(const std::string& name);
  Graph& graph() { return g_; }
  const ModelBundle& bundle() const { return bundle_; }

 private:
  Graph& g_;
  const ModelBundle& bundle_;
  ParamMap* grads_;
  std::map<std::string, Var> cache_;
};

/// Level l of K as a real in (-1, 1): 2 (l + 0.5) / K - 1.
inline double embed_level(std::int32_t level, int levels) {
  return 2.0 * (static_cast<double>(level) + 0.5) / static_cast<double>(levels) - 1.0;
}
/// [N, H, W, C] embedding of a batch of images with identical shapes.
Tensor embed_images(std::span<const QuantizedImage* const> images);

/// relu of the last ResNet stage, [N, out_h, out_w, cond_width].
Var conditioning_features(ParamBinder& p, const Var& x);
/// 1x1 head on the features: [N, out_h, out_w, C*K] logits, or [N, out_h, out_w, C]
/// tanh outputs for the mse kind.
Var conditioning_head(ParamBinder& p, const Var& features);
/// [N, out_h, out_w, C*K] logits; channel c*K + k scores level k of colour c.
/// `features` is required when the config enables conditioning injection.
Var prior_network(ParamBinder& p, const Var& y, const Var* features);

enum class Objective { O1, O2, pixel_ce, mse };
std::string to_string(Objective o);
Objective parse_objective(const std::string& name);
/// The model kind an objective trains.
ModelKind objective_model(Objective o);

struct Batch {
  std::size_t size = 0;
  Tensor x;  // embedded inputs [N, in_h, in_w, C]
  Tensor y;  // embedded targets [N, out_h, out_w, C]
  std::vector<std::int32_t> targets;  // N * M levels in sub-pixel order
  std::optional<Tensor> x_up;  // embedded bicubic upsample of x (mse residual)
};
Batch make_batch(const PairedDataset& ds, std::span<const std::size_t> indices,
                 const ModelConfig& cfg);

/// Per-sub-pixel mean training loss (nats, or squared error for mse).
Var objective_loss(ParamBinder& p, const Batch& batch, Objective objective);

// ---------------------------------------------------------------------------
// Per-image evaluation. LogitsGrid tensors are [M, K], rows in sub-pixel order.

/// A(x); the mse kind is rejected.
Tensor condition_logits(const ModelBundle& bundle, const QuantizedImage& x);
/// B(y); `x` supplies the conditioning features when injection is enabled.
Tensor prior_logits(const ModelBundle& bundle, const QuantizedImage& y,
                    const QuantizedImage* x = nullptr);
/// mse kind: prediction in [-1, 1] at output resolution.
RealImage regress(const ModelBundle& bundle, const QuantizedImage& x);

/// softmax(a + b)
std::vector<double> fused_distribution(std::span<const double> a, std::span<const double> b);

/// -sum_i [(A+B)_i[t_i] - lse((A+B)_i)], averaged over sub-pixels unless `sum`.
double loss_O1(const Tensor& a, const Tensor& b, const QuantizedImage& target, bool sum = false);
/// -sum_i [2 A_i[t_i] + B_i[t_i] - lse(A_i + B_i) - lse(A_i)]
double loss_O2(const Tensor& a, const Tensor& b, const QuantizedImage& target, bool sum = false);
/// Independent softmax cross-entropy.
double loss_pixel_ce(const Tensor& logits, const QuantizedImage& target, bool sum = false);
/// Mean squared error over sub-pixels.
double loss_mse(const RealImage& prediction, const RealImage& target);

/// Teacher-forced -log2 p(y | x) per sub-pixel.
double nll_report(const ModelBundle& bundle, const QuantizedImage& x, const QuantizedImage& y);

// ---------------------------------------------------------------------------
// Checkpoints: "PIXREC01", u64-length-prefixed key=value text, u64 tensor
// count, then per tensor (u64-prefixed name, u64 rank, u64 dims, LE doubles).

struct Checkpoint {
  KeyValues meta;
  ParamMap tensors;
};
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
/// Rebuilds a bundle from checkpoint metadata; optimizer ("opt/...") tensors are ignored.
ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace pixrec
