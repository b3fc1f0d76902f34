#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace recog {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array of doubles with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// treated as immutable once an op has consumed them; only leaves (parameters)
/// are updated in place, and only between tapes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> mutable_grad() const;
  void zero_grad() const { node_->grad.clear(); }

  const void* id() const { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Records differentiable operations executed on the current thread while it
/// is alive. Tapes nest; the innermost one is active. Ops executed with no
/// active tape record nothing.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(Tensor output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, in reverse
  /// execution order. Gradients accumulate into requires_grad tensors.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  GradTape* previous_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* saved_;
};

/// True when an op with these inputs must be recorded on the active tape.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(std::span<const Tensor> inputs);

/// Marks `output` as differentiable and registers its backward rule.
void record_op(Tensor& output, GradTape::BackwardFn backward);

/// Adds `values` into the gradient buffer of `t` when it requires grad.
void accumulate_grad(const Tensor& t, std::span<const double> values);

}  // namespace recog
