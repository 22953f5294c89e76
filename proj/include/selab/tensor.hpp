#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Ops on tensors that require
// gradients record their inputs and a backward rule on the node; calling
// backward() on a scalar loss orders the reachable nodes into a Tape and
// runs the rules in reverse. Element type is a template parameter so the
// same model code runs in float (training) and double (gradient checks).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace selab {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  // Zero-initialized on first use.
  T* grad_buffer();
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data,
                     bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->data.size());
  }

  std::span<const T> data() const { return node_->data; }
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::int64_t flat_index) const { return node_->data[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Same data, no history, no grad requirement.
  Tensor detach() const;
  // Deep copy of the data into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// Whether ops record history on the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered list of the graph nodes reachable from a loss that
// take part in differentiation. Inputs always precede the ops consuming them.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  std::size_t size() const { return nodes_.size(); }
  std::span<Node<T>* const> nodes() const { return nodes_; }
  // Seeds the root gradient with one and runs backward rules in reverse.
  void run_backward() const;

 private:
  std::vector<Node<T>*> nodes_;
};

// Populates grads of every requires_grad leaf reachable from `loss`.
// Throws GradError for a non-scalar or detached loss.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

// Creates an op result. History is recorded only when grad mode is on and
// some input requires grad; the backward rule is dropped otherwise.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::string op,
                 std::vector<Tensor<T>> inputs,
                 std::function<void(Node<T>&)> backward_rule);

}  // namespace detail

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace selab
