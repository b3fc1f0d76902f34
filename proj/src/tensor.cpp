#include "recog/tensor.hpp"

#include <cmath>

#include <fmt/format.h>

namespace recog {

std::string shape_str(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<detail::TensorNode>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(fmt::format("shape {} holds {} values, got {}", shape_str(shape),
                                     shape_numel(shape), values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
  return node_->grad;
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = saved_; }

void GradTape::record(Tensor output, BackwardFn backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  bool on_tape = false;
  for (const Entry& e : entries_) {
    if (e.output.id() == loss.id()) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw ContractError("backward() loss was not produced on this tape");

  loss.mutable_grad()[0] += 1.0;
  // Execution order is a topological order, so the reverse visits every
  // consumer before its producers.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool needs_grad(std::span<const Tensor> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record_op(Tensor& output, GradTape::BackwardFn backward) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) throw ContractError("record_op() without an active tape");
  output.set_requires_grad(true);
  tape->record(output, std::move(backward));
}

void accumulate_grad(const Tensor& t, std::span<const double> values) {
  if (!t.requires_grad()) return;
  std::span<double> g = t.mutable_grad();
  for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
}

}  // namespace recog
