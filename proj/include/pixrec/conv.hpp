#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pixrec/tensor.hpp"

namespace pixrec {

enum class Padding { same, valid };

/// Spatial bookkeeping for one strided 2-D cross-correlation.
///
/// `same` padding follows the TensorFlow rule: out = ceil(in / stride), with
/// the odd padding pixel on the bottom/right.
struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t kh = 0, kw = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;

  static ConvGeometry make(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw,
                           std::size_t stride, Padding padding);
};

/// Kernel [kh, kw, Cin, Cout] with its mask folded in.
///
/// Only (tap, input channel) rows with at least one enabled weight are
/// visited; each visited row updates every output channel (masked weights
/// are zero). Every evaluation path adds the row products in the same order,
/// so results do not depend on which path computed them.
class PreparedKernel {
 public:
  PreparedKernel(const Tensor& kernel, const Tensor* mask);

  struct Row {
    std::uint32_t tap = 0, ci = 0;  // tap = dy * kw + dx
  };

  /// Kernel of the stride-1 adjoint: spatially flipped, Cin and Cout swapped.
  PreparedKernel flipped() const;

  std::size_t kh = 0, kw = 0, cin = 0, cout = 0;
  std::vector<double> weights;  // kernel * mask
  std::vector<Row> live;        // ascending (tap, ci)
  std::size_t dy_min = 0, dy_max = 0, dx_min = 0, dx_max = 0;
  const Tensor* mask = nullptr;

 private:
  PreparedKernel() = default;
  void finish();
};

/// Output channels at one position of one image. `image` points at an
/// [in_h, in_w, cin] block; `out` receives cout values (overwritten).
/// The full convolution calls this per position, so evaluating a single
/// position reproduces the full result bit for bit.
void conv_at(const double* image, const ConvGeometry& geom, const PreparedKernel& kernel,
             std::size_t oy, std::size_t ox, double* out);

/// out [N, out_h, out_w, cout] = conv(in [N, in_h, in_w, cin]).
void conv_forward(const Tensor& in, const PreparedKernel& kernel, const ConvGeometry& geom,
                  Tensor& out);

/// grad_in += adjoint of conv applied to grad_out.
void conv_backward_input(std::span<const double> grad_out, std::size_t batch,
                         const PreparedKernel& kernel, const ConvGeometry& geom,
                         std::span<double> grad_in);

/// grad_kernel += d<conv(in), grad_out>/d kernel, masked.
void conv_backward_kernel(std::span<const double> in, std::span<const double> grad_out,
                          std::size_t batch, const PreparedKernel& kernel,
                          const ConvGeometry& geom, std::span<double> grad_kernel);

}  // namespace pixrec
