#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace meaformer::nc {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when an operation receives operands that violate its shape or
/// configuration contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Graph node shared by tensor handles. `backward` reads `grad` and
/// accumulates into the gradients of `parents`.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  // Gradient buffer of parent `i`, or nullptr when it is not tracked.
  T* parent_grad(size_t i) {
    Node& p = *parents[i];
    return p.requires_grad ? p.grad_buffer() : nullptr;
  }
};

bool grad_enabled();

/// Branch tape for ops with a non-differentiable point (ReLU, |x|, clamps,
/// bilinear cell selection). In Record mode each op appends the branch it
/// takes; in Replay mode it reads the recorded branch back, so a perturbed
/// evaluation stays on the base point's smooth piece. `crossed()` reports
/// whether any replayed branch differs from the one the op would have taken.
class BranchTrace {
 public:
  enum class Mode { Record, Replay, Check };

  explicit BranchTrace(Mode mode = Mode::Record, const std::vector<int64_t>* tape = nullptr);
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  /// Returns the branch to use: `actual` when recording or checking, the
  /// taped value when replaying.
  int64_t branch(int64_t actual);
  bool crossed() const { return crossed_; }
  const std::vector<int64_t>& tape() const { return own_; }

 private:
  Mode mode_;
  const std::vector<int64_t>* replay_;
  std::vector<int64_t> own_;
  size_t cursor_ = 0;
  bool crossed_ = false;
  BranchTrace* previous_;
};

/// Active trace of the current thread, or nullptr.
BranchTrace* branch_trace();

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// Copies share storage; use clone() or detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<T> data() const { return node_->value; }
  T item() const;
  T at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) const { node_->requires_grad = flag; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<T> grad() const;
  void zero_grad() const;

  /// Backpropagates from this scalar. The intermediate graph is released
  /// afterwards; leaf gradients accumulate.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op output. The graph edge is recorded only when gradients are
/// enabled and at least one input is tracked.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward);

template <typename T>
bool all_finite(const Tensor<T>& t);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace meaformer::nc
