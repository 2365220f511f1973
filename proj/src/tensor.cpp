#include "saccade/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace saccade {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, Buffer<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, Buffer<T>{value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<Node<T>> node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
int BasicTensor<T>::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(node_->shape, node_->data, node_->requires_grad);
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), T(0));
  }
  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace saccade
