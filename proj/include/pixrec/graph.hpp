#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "pixrec/tensor.hpp"

namespace pixrec {

class Graph;

/// Handle to a value recorded on a Graph.
///
/// A Var either tracks gradients (its tensor owns a grad buffer that backward
/// accumulates into) or is a constant. Vars are cheap to copy and only valid
/// while their Graph is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  bool requires_grad() const { return tracks_; }
  Graph& graph() const { return *graph_; }

  /// Gradient accumulator; only valid when requires_grad().
  std::span<double> grad() const { return grad_; }

 private:
  friend class Graph;
  Var(Graph* g, const Tensor* value, std::span<double> grad, bool tracks)
      : graph_(g), value_(value), grad_(grad), tracks_(tracks) {}

  Graph* graph_ = nullptr;
  const Tensor* value_ = nullptr;
  std::span<double> grad_;
  bool tracks_ = false;
};

/// Reverse-mode tape, rebuilt for every forward pass.
///
/// Backward closures run in exact reverse order of recording. With gradients
/// disabled the graph records nothing and acts as a plain evaluator.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// References a trainable tensor without copying. Gradients accumulate into
  /// `t.grad()` when the graph records and `t` has a grad buffer.
  Var param(Tensor& t);
  /// References `value` and accumulates its gradient into `grad_sink`, which
  /// must have the same length. Lets read-only parameters be trained.
  Var param(const Tensor& value, std::span<double> grad_sink);
  /// References a tensor that never receives gradients. `t` must outlive the graph.
  Var input(const Tensor& t);
  /// Takes ownership of a constant.
  Var constant(Tensor t);

  /// Stores an op result; allocates its grad buffer when `tracks` is set.
  Var emit(Tensor value, bool tracks);
  void on_backward(std::function<void()> fn);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(const Var& loss);

  std::size_t tape_size() const { return tape_.size(); }

 private:
  bool grad_enabled_;
  std::deque<Tensor> owned_;
  std::vector<std::function<void()>> tape_;
};

}  // namespace pixrec
