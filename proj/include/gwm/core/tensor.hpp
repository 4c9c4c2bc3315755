// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gwm {

// 64-byte aligned storage for all tensor buffers. Fixed alignment makes
// Eigen's SIMD lane grouping identical across allocations, so repeated
// forward passes are bit-identical (not just close).
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}
  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    std::size_t bytes = (n * sizeof(T) + Align - 1) / Align * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U, Align>&) const {
    return false;
  }
};

template <typename T>
using TVec = std::vector<T, AlignedAllocator<T>>;

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Reverse-mode autodiff over dense row-major tensors. Graphs are built
// dynamically: each op returns a fresh node holding its value plus a closure
// that routes the node's gradient into its parents. Node granularity is
// whole-array (one node per layer-level op), so closure overhead is
// negligible next to the arithmetic.
template <typename T>
struct TensorNode {
  std::vector<int> shape;
  TVec<T> value;
  TVec<T> grad;  // allocated lazily, same numel as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;
  uint64_t visit_mark = 0;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  TVec<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Thread-local switch used by inference paths (acting, embedding for the
// world model) to skip graph construction entirely.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from_vector(std::vector<int> shape, const std::vector<T>& v, bool requires_grad = false) {
    check(shape_numel(shape) == static_cast<int64_t>(v.size()), "from_vector: shape/data mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(v.begin(), v.end());
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from_buffer(std::vector<int> shape, TVec<T> v, bool requires_grad = false) {
    check(shape_numel(shape) == static_cast<int64_t>(v.size()), "from_buffer: shape/data mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }

  TVec<T>& data() { return n_->value; }
  const TVec<T>& data() const { return n_->value; }
  TVec<T>& grad() { return n_->ensure_grad(); }
  const TVec<T>& grad_ref() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  T item() const {
    check(numel() == 1, "item: tensor is not scalar, shape " + shape_str(shape()));
    return n_->value[0];
  }

  std::shared_ptr<Node> node() const { return n_; }
  Node* raw() const { return n_.get(); }

  // Detached copy: shares nothing with the graph.
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = n_->shape;
    n->value = n_->value;
    n->requires_grad = false;
    return Tensor(n);
  }

  // Runs reverse-mode accumulation from this scalar. Parameter gradients
  // accumulate across calls until zero_grad().
  void backward() {
    check(numel() == 1, "backward: root must be scalar");
    check(n_->requires_grad, "backward: root does not require grad");
    std::vector<Node*> order;
    topo_collect(order);
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

 private:
  void topo_collect(std::vector<Node*>& order) {
    static uint64_t epoch = 0;
    uint64_t mark = ++epoch;
    // Iterative DFS; state 0 = expand parents, 1 = emit.
    std::vector<std::pair<Node*, int>> stack;
    stack.push_back({n_.get(), 0});
    while (!stack.empty()) {
      size_t idx = stack.size() - 1;
      Node* node = stack[idx].first;
      if (stack[idx].second == 0) {
        if (node->visit_mark == mark) {
          stack.pop_back();
          continue;
        }
        stack[idx].second = 1;
        node->visit_mark = mark;
        for (auto& p : node->parents) {
          if (p->visit_mark != mark && p->requires_grad) stack.push_back({p.get(), 0});
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

// Result node wiring shared by every op implementation.
template <typename T>
Tensor<T> make_op_node(std::vector<int> shape, TVec<T> value,
                       std::vector<Tensor<T>> inputs,
                       std::function<void(TensorNode<T>&)> backward) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = false;
  if (grad_mode_flag()) {
    for (auto& in : inputs)
      if (in.requires_grad()) track = true;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor<T>(n);
}

}  // namespace gwm
