#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "pixrec/graph.hpp"

namespace pixrec {

/// Builds a scalar loss on the given graph from the checked parameters.
using LossFn = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 1;
};

/// Worst relative error |a - b| / max(|a|, |b|, 1e-8) between reverse-mode
/// gradients and central finite differences over (a sample of) every
/// coordinate of `params`. Parameter values are restored on return.
double grad_check(const LossFn& loss_fn, std::span<Tensor* const> params,
                  const GradCheckOptions& opts = {});

}  // namespace pixrec
