#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace langdet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

// One recorded operation. Nodes form the tape: a DAG whose edges point from
// results to operands. backward() walks it in reverse topological order,
// visiting every node exactly once and accumulating gradients additively
// across fan-out.
struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense real-valued n-d array, 64-bit floats throughout. Immutable once
// created; all shapes are explicit (no broadcasting). Copies are shallow
// handles onto the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t ndim() const { return node_->shape.size(); }

  const std::vector<double>& values() const { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  double at(std::size_t r, std::size_t c) const;  // 2-d access
  double value() const;                           // scalar access

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Deterministic: gradient accumulation
  // order is fixed by construction order of the tape.
  void backward() const;

  // Leaf mutation for optimizers and finite differencing. Rejected on
  // interior nodes: recorded results never change after creation.
  std::vector<double>& mutable_values();

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds a result node wired to its parents; the tape records it only when
// some input requires grad.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<std::shared_ptr<detail::Node>> parents,
               std::function<void(detail::Node&)> backward_fn);

}  // namespace langdet
