#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace saccade {

using Shape = std::vector<int>;

/// Raised for any operand whose shape does not satisfy an op's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned storage. Every buffer starts on the same boundary, so
/// vectorized kernels see the same alignment on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Row-major n-d array with an optional gradient buffer and a link into the
/// autodiff tape. Copies share the underlying node, like a handle.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, Buffer<T> data, bool requires_grad = false);
  BasicTensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  /// Size of axis `axis`; negative values count from the back.
  int dim(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
  /// calls; intermediate gradients are recomputed each call.
  void backward() const;

  /// Fresh untracked leaf holding a copy of the data.
  BasicTensor detach() const;
  /// Deep copy including requires_grad, without graph links.
  BasicTensor clone() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  static BasicTensor from_node(std::shared_ptr<Node<T>> node);

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x, bool requires_grad = false) {
  Buffer<To> out(x.data().begin(), x.data().end());
  return BasicTensor<To>(x.shape(), std::move(out), requires_grad);
}

bool grad_enabled();

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace saccade
