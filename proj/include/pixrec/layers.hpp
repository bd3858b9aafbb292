#pragma once

#include <cstddef>
#include <optional>

#include "pixrec/graph.hpp"
#include "pixrec/ops.hpp"

namespace pixrec {

/// A excludes the current sub-pixel (first layer), B includes it.
enum class MaskKind { A, B };

/// Raster-order mask for a [kh, kw, cin, cout] kernel whose channels are split
/// evenly into `groups` colour groups (3 for RGB, 1 for grayscale).
struct MaskSpec {
  MaskKind kind = MaskKind::B;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t cin = 1, cout = 1;
  std::size_t groups = 1;
};

/// Taps above the centre row and left of centre are open; below and right
/// are closed. At the centre, output group g sees input groups < g (kind A)
/// or <= g (kind B).
Tensor build_mask(const MaskSpec& spec);

/// Colour group of `channel` among `channels` split into `groups`.
inline std::size_t channel_group(std::size_t channel, std::size_t channels, std::size_t groups) {
  return channel / (channels / groups);
}

struct GatedBlockVars {
  Var w_tanh, b_tanh;
  Var w_sigmoid, b_sigmoid;
  Var w_proj, b_proj;
  /// 1x1 unmasked projections of the conditioning features, if injected.
  std::optional<Var> inj_tanh, inj_sigmoid;
};

struct GatedBlockMasks {
  Tensor conv;  // kind B, kh x kw
  Tensor proj;  // kind B, 1 x 1
};

/// x + proj(tanh(conv_t(x) + b_t + inj_t(cond)) * sigmoid(conv_s(x) + b_s + inj_s(cond))) + b_proj
Var gated_block(const Var& x, const GatedBlockVars& p, const GatedBlockMasks& masks,
                const Var* cond);

struct ResNetBlockVars {
  Var w1, b1, w2, b2;
};

/// Pre-activation residual block: x + conv2(relu(conv1(relu(x)) + b1)) + b2.
Var resnet_block(const Var& x, const ResNetBlockVars& p);

}  // namespace pixrec
