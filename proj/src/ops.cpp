#include "pixrec/ops.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <string>

#include "pixrec/errors.hpp"

namespace pixrec {

namespace {

bool any_tracks(std::initializer_list<const Var*> vs) {
  for (const Var* v : vs) {
    if (v->requires_grad()) return true;
  }
  return false;
}

Graph& same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw ConfigError("operands recorded on different graphs");
  return a.graph();
}

template <class F>
Var unary(const Var& x, F f) {
  Tensor out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.graph().emit(std::move(out), x.requires_grad());
}

std::size_t last_extent(const Var& v, const char* what) {
  if (v.value().rank() == 0) throw DimensionError(std::string(what) + ": needs rank >= 1");
  const std::size_t k = v.shape().back();
  if (k == 0) throw DimensionError(std::string(what) + ": last axis is empty");
  return k;
}

}  // namespace

double log_sum_exp_row(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (const double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void softmax_row(std::span<const double> v, std::span<double> out) {
  const double lse = log_sum_exp_row(v);
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::exp(v[k] - lse);
}

Var add(const Var& a, const Var& b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  Var y = g.emit(std::move(out), any_tracks({&a, &b}));
  if (y.requires_grad()) {
    g.on_backward([a, b, y] {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Var y = g.emit(std::move(out), any_tracks({&a, &b}));
  if (y.requires_grad()) {
    g.on_backward([a, b, y] {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a.value()[i];
      }
    });
  }
  return y;
}

Var scale(const Var& a, double s) {
  Var y = unary(a, [s](double v) { return v * s; });
  if (y.requires_grad()) {
    a.graph().on_backward([a, y, s] {
      const auto gy = y.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    });
  }
  return y;
}

Var add_bias(const Var& x, const Var& b) {
  Graph& g = same_graph(x, b);
  const std::size_t c = last_extent(x, "add_bias");
  if (b.value().rank() != 1 || b.shape()[0] != c) {
    throw DimensionError("add_bias: bias " + shape_to_string(b.shape()) +
                         " does not match input " + shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  const auto xv = x.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % c];
  Var y = g.emit(std::move(out), any_tracks({&x, &b}));
  if (y.requires_grad()) {
    g.on_backward([x, b, y, c] {
      const auto gy = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
      }
    });
  }
  return y;
}

Var relu(const Var& x) {
  Var y = unary(x, relu_scalar);
  if (y.requires_grad()) {
    x.graph().on_backward([x, y] {
      const auto gy = y.grad();
      auto gx = x.grad();
      const auto xv = x.value().data();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += gy[i];
      }
    });
  }
  return y;
}

Var tanh(const Var& x) {
  Var y = unary(x, tanh_scalar);
  if (y.requires_grad()) {
    x.graph().on_backward([x, y] {
      const auto gy = y.grad();
      auto gx = x.grad();
      const auto yv = y.value().data();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return y;
}

Var sigmoid(const Var& x) {
  Var y = unary(x, sigmoid_scalar);
  if (y.requires_grad()) {
    x.graph().on_backward([x, y] {
      const auto gy = y.grad();
      auto gx = x.grad();
      const auto yv = y.value().data();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return y;
}

Var reshape(const Var& x, Shape shape) {
  Var y = x.graph().emit(x.value().reshaped(std::move(shape)), x.requires_grad());
  if (y.requires_grad()) {
    x.graph().on_backward([x, y] {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

Var slice_last(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t c = last_extent(x, "slice_last");
  if (begin >= end || end > c) {
    throw DimensionError("slice_last: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_to_string(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t w = end - begin;
  shape.back() = w;
  Tensor out(shape);
  const std::size_t rows = x.value().size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x.value()[r * c + begin + j];
  }
  Var y = x.graph().emit(std::move(out), x.requires_grad());
  if (y.requires_grad()) {
    x.graph().on_backward([x, y, rows, c, w, begin] {
      const auto gy = y.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] += gy[r * w + j];
      }
    });
  }
  return y;
}

Var concat_last(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_last: no inputs");
  Graph& g = xs.front().graph();
  Shape lead = xs.front().shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  bool tracks = false;
  for (const Var& v : xs) {
    if (&v.graph() != &g) throw ConfigError("concat_last: operands on different graphs");
    Shape l = v.shape();
    const std::size_t c = last_extent(v, "concat_last");
    l.pop_back();
    if (l != lead) {
      throw DimensionError("concat_last: leading dims differ " + shape_to_string(v.shape()) +
                           " vs " + shape_to_string(xs.front().shape()));
    }
    widths.push_back(c);
    total += c;
    tracks = tracks || v.requires_grad();
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor out(shape);
  const std::size_t rows = shape_numel(lead);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) out[r * total + offset + j] = xs[k].value()[r * w + j];
    }
    offset += w;
  }
  Var y = g.emit(std::move(out), tracks);
  if (y.requires_grad()) {
    g.on_backward([xs, y, widths, rows, total] {
      const auto gy = y.grad();
      std::size_t off = 0;
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const std::size_t w = widths[k];
        if (xs[k].requires_grad()) {
          auto gx = xs[k].grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) gx[r * w + j] += gy[r * total + off + j];
          }
        }
        off += w;
      }
    });
  }
  return y;
}

Var sum(const Var& x) {
  double s = 0.0;
  for (const double v : x.value().data()) s += v;
  Var y = x.graph().emit(Tensor::scalar(s), x.requires_grad());
  if (y.requires_grad()) {
    x.graph().on_backward([x, y] {
      const double gy = y.grad()[0];
      for (double& gx : x.grad()) gx += gy;
    });
  }
  return y;
}

Var mean(const Var& x) {
  if (x.value().size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var matmul(const Var& a, const Var& b) {
  Graph& g = same_graph(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  const double* av = a.value().ptr();
  const double* bv = b.value().ptr();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  Var y = g.emit(std::move(out), any_tracks({&a, &b}));
  if (y.requires_grad()) {
    g.on_backward([a, b, y, m, k, n] {
      const auto gy = y.grad();
      const double* av = a.value().ptr();
      const double* bv = b.value().ptr();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * gy[i * n + j];
          }
        }
      }
    });
  }
  return y;
}

Var conv2d(const Var& input, const Var& kernel, const ConvOptions& opts) {
  Graph& g = same_graph(input, kernel);
  if (input.value().rank() != 4 || kernel.value().rank() != 4 ||
      input.shape()[3] != kernel.shape()[2]) {
    throw DimensionError("conv2d: input " + shape_to_string(input.shape()) +
                         " incompatible with kernel " + shape_to_string(kernel.shape()));
  }
  auto prepared = std::make_shared<PreparedKernel>(kernel.value(), opts.mask);
  const ConvGeometry geom =
      ConvGeometry::make(input.shape()[1], input.shape()[2], kernel.shape()[0],
                         kernel.shape()[1], opts.stride, opts.padding);
  Tensor out;
  conv_forward(input.value(), *prepared, geom, out);
  Var y = g.emit(std::move(out), any_tracks({&input, &kernel}));
  if (y.requires_grad()) {
    g.on_backward([input, kernel, y, prepared, geom] {
      const std::size_t n = input.shape()[0];
      if (input.requires_grad()) {
        conv_backward_input(y.grad(), n, *prepared, geom, input.grad());
      }
      if (kernel.requires_grad()) {
        conv_backward_kernel(input.value().data(), y.grad(), n, *prepared, geom,
                             kernel.grad());
      }
    });
  }
  return y;
}

Var transposed_conv2d(const Var& input, const Var& kernel, std::size_t stride) {
  Graph& g = same_graph(input, kernel);
  if (input.value().rank() != 4 || kernel.value().rank() != 4 ||
      input.shape()[3] != kernel.shape()[3]) {
    throw DimensionError("transposed_conv2d: input " + shape_to_string(input.shape()) +
                         " incompatible with kernel " + shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw ParameterError("transposed_conv2d: stride must be >= 1");
  const std::size_t n = input.shape()[0];
  const std::size_t big_h = input.shape()[1] * stride, big_w = input.shape()[2] * stride;
  auto prepared = std::make_shared<PreparedKernel>(kernel.value(), nullptr);
  const ConvGeometry geom = ConvGeometry::make(big_h, big_w, kernel.shape()[0],
                                               kernel.shape()[1], stride, Padding::same);
  Tensor out(Shape{n, big_h, big_w, kernel.shape()[2]});
  conv_backward_input(input.value().data(), n, *prepared, geom, out.data());
  Var y = g.emit(std::move(out), any_tracks({&input, &kernel}));
  if (y.requires_grad()) {
    g.on_backward([input, kernel, y, prepared, geom, n, big_h, big_w] {
      Tensor gy_big(Shape{n, big_h, big_w, prepared->cin},
                    std::vector<double>(y.grad().begin(), y.grad().end()));
      if (input.requires_grad()) {
        Tensor gin;
        conv_forward(gy_big, *prepared, geom, gin);
        auto gx = input.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gin[i];
      }
      if (kernel.requires_grad()) {
        conv_backward_kernel(gy_big.data(), input.value().data(), n, *prepared, geom,
                             kernel.grad());
      }
    });
  }
  return y;
}

Var log_sum_exp(const Var& v) {
  const std::size_t k = last_extent(v, "log_sum_exp");
  Shape shape = v.shape();
  shape.pop_back();
  Tensor out(shape);
  const std::size_t rows = v.value().size() / k;
  const auto in = v.value().data();
  for (std::size_t r = 0; r < rows; ++r) out[r] = log_sum_exp_row(in.subspan(r * k, k));
  Var y = v.graph().emit(std::move(out), v.requires_grad());
  if (y.requires_grad()) {
    v.graph().on_backward([v, y, rows, k] {
      const auto gy = y.grad();
      auto gv = v.grad();
      const auto in = v.value().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double lse = y.value()[r];
        for (std::size_t j = 0; j < k; ++j) gv[r * k + j] += gy[r] * std::exp(in[r * k + j] - lse);
      }
    });
  }
  return y;
}

Var softmax(const Var& v) {
  const std::size_t k = last_extent(v, "softmax");
  Tensor out(v.shape());
  const std::size_t rows = v.value().size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(v.value().data().subspan(r * k, k), out.data().subspan(r * k, k));
  }
  Var y = v.graph().emit(std::move(out), v.requires_grad());
  if (y.requires_grad()) {
    v.graph().on_backward([v, y, rows, k] {
      const auto gy = y.grad();
      auto gv = v.grad();
      const auto s = y.value().data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += gy[r * k + j] * s[r * k + j];
        for (std::size_t j = 0; j < k; ++j) gv[r * k + j] += s[r * k + j] * (gy[r * k + j] - dot);
      }
    });
  }
  return y;
}

namespace {

std::size_t check_targets(const Var& logits, std::span<const std::int32_t> targets,
                          const char* what) {
  const std::size_t k = last_extent(logits, what);
  const std::size_t rows = logits.value().size() / k;
  if (targets.size() != rows) {
    throw DimensionError(std::string(what) + ": " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " logit rows");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) {
      throw DataError(std::string(what) + ": target level " + std::to_string(targets[r]) +
                      " at row " + std::to_string(r) + " outside [0," + std::to_string(k) + ")");
    }
  }
  return k;
}

}  // namespace

Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets) {
  const std::size_t k = check_targets(logits, targets, "cross_entropy");
  const std::size_t rows = targets.size();
  const auto z = logits.value().data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = z.subspan(r * k, k);
    total += log_sum_exp_row(row) - row[static_cast<std::size_t>(targets[r])];
  }
  Var y = logits.graph().emit(Tensor::scalar(total / static_cast<double>(rows)),
                              logits.requires_grad());
  if (y.requires_grad()) {
    std::vector<std::int32_t> t(targets.begin(), targets.end());
    logits.graph().on_backward([logits, y, t = std::move(t), rows, k] {
      const double gy = y.grad()[0] / static_cast<double>(rows);
      auto gz = logits.grad();
      const auto z = logits.value().data();
      std::vector<double> p(k);
      for (std::size_t r = 0; r < rows; ++r) {
        softmax_row(z.subspan(r * k, k), p);
        p[static_cast<std::size_t>(t[r])] -= 1.0;
        for (std::size_t j = 0; j < k; ++j) gz[r * k + j] += gy * p[j];
      }
    });
  }
  return y;
}

Var dual_cross_entropy(const Var& a, const Var& b, std::span<const std::int32_t> targets) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.shape(), b.shape(), "dual_cross_entropy");
  const std::size_t k = check_targets(a, targets, "dual_cross_entropy");
  const std::size_t rows = targets.size();
  const auto av = a.value().data();
  const auto bv = b.value().data();
  std::vector<double> ab(k);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto ar = av.subspan(r * k, k);
    const auto br = bv.subspan(r * k, k);
    for (std::size_t j = 0; j < k; ++j) ab[j] = ar[j] + br[j];
    const auto t = static_cast<std::size_t>(targets[r]);
    total -= 2.0 * ar[t] + br[t] - log_sum_exp_row(ab) - log_sum_exp_row(ar);
  }
  Var y = g.emit(Tensor::scalar(total / static_cast<double>(rows)), any_tracks({&a, &b}));
  if (y.requires_grad()) {
    std::vector<std::int32_t> t(targets.begin(), targets.end());
    g.on_backward([a, b, y, t = std::move(t), rows, k] {
      const double gy = y.grad()[0] / static_cast<double>(rows);
      const auto av = a.value().data();
      const auto bv = b.value().data();
      std::vector<double> ab(k), p_ab(k), p_a(k);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto ar = av.subspan(r * k, k);
        for (std::size_t j = 0; j < k; ++j) ab[j] = ar[j] + bv[r * k + j];
        softmax_row(ab, p_ab);
        softmax_row(ar, p_a);
        const auto tr = static_cast<std::size_t>(t[r]);
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t j = 0; j < k; ++j) {
            ga[r * k + j] += gy * (p_ab[j] + p_a[j] - (j == tr ? 2.0 : 0.0));
          }
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t j = 0; j < k; ++j) {
            gb[r * k + j] += gy * (p_ab[j] - (j == tr ? 1.0 : 0.0));
          }
        }
      }
    });
  }
  return y;
}

Var mse(const Var& pred, const Var& target) {
  Graph& g = same_graph(pred, target);
  require_same_shape(pred.shape(), target.shape(), "mse");
  const std::size_t n = pred.value().size();
  if (n == 0) throw DimensionError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  Var y = g.emit(Tensor::scalar(s / static_cast<double>(n)), any_tracks({&pred, &target}));
  if (y.requires_grad()) {
    g.on_backward([pred, target, y, n] {
      const double gy = y.grad()[0] * 2.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.value()[i] - target.value()[i];
        if (pred.requires_grad()) pred.grad()[i] += gy * d;
        if (target.requires_grad()) target.grad()[i] -= gy * d;
      }
    });
  }
  return y;
}

}  // namespace pixrec
