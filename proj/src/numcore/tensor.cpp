#include "meaformer/numcore/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace meaformer::nc {

namespace {
thread_local bool t_grad_enabled = true;
thread_local BranchTrace* t_branch_trace = nullptr;
}

BranchTrace::BranchTrace(Mode mode, const std::vector<int64_t>* tape)
    : mode_(mode), replay_(tape), previous_(t_branch_trace) {
  if (mode_ != Mode::Record && !replay_) throw ContractError("branch replay needs a tape");
  t_branch_trace = this;
}

BranchTrace::~BranchTrace() { t_branch_trace = previous_; }

int64_t BranchTrace::branch(int64_t actual) {
  if (mode_ == Mode::Record) {
    own_.push_back(actual);
    return actual;
  }
  if (cursor_ >= replay_->size()) {
    crossed_ = true;  // evaluation diverged structurally from the recording
    return actual;
  }
  const int64_t recorded = (*replay_)[cursor_++];
  if (recorded != actual) crossed_ = true;
  return mode_ == Mode::Replay ? recorded : actual;
}

BranchTrace* branch_trace() { return t_branch_trace; }

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ContractError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(static_cast<size_t>(nc::numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (nc::numel(shape) != static_cast<int64_t>(values.size()))
    throw ContractError("value count " + std::to_string(values.size()) + " does not match shape " +
                        shape_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
int64_t Tensor<T>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ContractError("axis out of range for shape " + shape_string(shape()));
  return node_->shape[static_cast<size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ContractError("index rank mismatch");
  int64_t flat = 0;
  size_t axis = 0;
  for (int64_t i : index) {
    const int64_t d = node_->shape[axis++];
    if (i < 0 || i >= d) throw ContractError("index out of range");
    flat = flat * d + i;
  }
  return node_->value[static_cast<size_t>(flat)];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  return node_->grad_buffer() ? std::span<T>(node_->grad) : std::span<T>();
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw ContractError("backward() requires a scalar, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  // Release intermediates; leaves keep their accumulated gradients.
  for (Node<T>* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      if (n != node_.get()) std::vector<T>().swap(n->grad);
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  assert(nc::numel(shape) == static_cast<int64_t>(value.size()));
  node->shape = std::move(shape);
  node->value = std::move(value);
#ifndef NDEBUG
  for (T v : node->value) assert(std::isfinite(v) && "non-finite value produced by op");
#endif
  if (grad_enabled()) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
    if (tracked) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                    std::function<void(Node<double>&)>);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace meaformer::nc
