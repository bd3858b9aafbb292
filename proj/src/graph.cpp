#include "pixrec/graph.hpp"

#include <ranges>
#include <string>

#include "pixrec/errors.hpp"

namespace pixrec {

Var Graph::param(Tensor& t) {
  if (grad_enabled_ && t.has_grad()) return Var(this, &t, t.grad(), true);
  return Var(this, &t, {}, false);
}

Var Graph::param(const Tensor& value, std::span<double> grad_sink) {
  if (grad_sink.size() != value.size()) {
    throw DimensionError("gradient sink of length " + std::to_string(grad_sink.size()) +
                         " for tensor " + shape_to_string(value.shape()));
  }
  if (grad_enabled_) return Var(this, &value, grad_sink, true);
  return Var(this, &value, {}, false);
}

Var Graph::input(const Tensor& t) { return Var(this, &t, {}, false); }

Var Graph::constant(Tensor t) {
  owned_.push_back(std::move(t));
  return Var(this, &owned_.back(), {}, false);
}

Var Graph::emit(Tensor value, bool tracks) {
  owned_.push_back(std::move(value));
  Tensor& stored = owned_.back();
  if (tracks && grad_enabled_) {
    stored.enable_grad();
    return Var(this, &stored, stored.grad(), true);
  }
  return Var(this, &stored, {}, false);
}

void Graph::on_backward(std::function<void()> fn) {
  if (grad_enabled_) tape_.push_back(std::move(fn));
}

void Graph::backward(const Var& loss) {
  if (&loss.graph() != this) throw ConfigError("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " +
                         shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += 1.0;
  for (auto& fn : std::views::reverse(tape_)) fn();
  tape_.clear();
}

}  // namespace pixrec
