#include "pixrec/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pixrec/errors.hpp"

namespace pixrec {

namespace {

double eval_loss(const LossFn& loss_fn) {
  Graph g(false);
  const double v = loss_fn(g).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite (" + std::to_string(v) + ")");
  return v;
}

}  // namespace

double grad_check(const LossFn& loss_fn, std::span<Tensor* const> params,
                  const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-6 && opts.eps <= 1e-3)) {
    throw ParameterError("grad_check: eps must lie in [1e-6, 1e-3]");
  }
  for (Tensor* p : params) {
    p->enable_grad();
    p->zero_grad();
  }
  {
    Graph g(true);
    Var loss = loss_fn(g);
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("grad_check: loss is not finite");
    }
    g.backward(loss);
  }

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    std::vector<std::size_t> coords(p->size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_tensor != 0 && coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_tensor);
    }
    for (const std::size_t i : coords) {
      const double saved = (*p)[i];
      (*p)[i] = saved + opts.eps;
      const double up = eval_loss(loss_fn);
      (*p)[i] = saved - opts.eps;
      const double down = eval_loss(loss_fn);
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace pixrec
