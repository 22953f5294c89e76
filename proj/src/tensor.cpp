#include "selab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "selab/error.hpp"

namespace selab {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
T* Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad.data();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = selab::numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data,
                          bool requires_grad) {
  for (auto d : shape) {
    if (d < 0) throw ShapeError("tensor: negative dimension in " + to_string(shape));
  }
  if (selab::numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(selab::numel(shape)) +
                     " elements but data has " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  int r = rank();
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("dim: axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(shape()));
  }
  return node_->shape[a];
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape()) +
                     " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  node_->requires_grad = value;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return from(node_->shape, node_->data, requires_grad);
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::run_backward() const {
  if (nodes_.empty()) return;
  Node<T>* root = nodes_.back();
  root->grad_buffer()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GradError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw GradError("backward: loss must be a scalar, got shape " +
                    to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw GradError(
        "backward: loss is detached from the tape (no input requires grad)");
  }
  Tape<T>::record(loss).run_backward();
}

namespace detail {

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::string op,
                 std::vector<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> backward_rule) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  if (grad_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) {
      return t.defined() && t.requires_grad();
    });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.shared_node());
      node->backward = std::move(backward_rule);
    }
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> record(Shape, std::vector<float>, std::string,
                              std::vector<Tensor<float>>,
                              std::function<void(Node<float>&)>);
template Tensor<double> record(Shape, std::vector<double>, std::string,
                               std::vector<Tensor<double>>,
                               std::function<void(Node<double>&)>);

}  // namespace detail

template struct Node<float>;
template struct Node<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace selab
