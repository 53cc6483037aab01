#include "langdet/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace langdet {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  std::size_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->values.assign(count, value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (ndim() != 2) throw std::invalid_argument("tensor: at(r,c) needs a 2-d tensor, got " + shape_str(shape()));
  return node_->values[r * dim(1) + c];
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("tensor: value() needs a scalar, got " + shape_str(shape()));
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("tensor: gradient not populated; call backward() first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::vector<double>& Tensor::mutable_values() {
  if (node_->backward_fn) {
    throw std::logic_error("tensor: interior tape nodes are immutable");
  }
  return node_->values;
}

void Tensor::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw std::invalid_argument("backward: loss does not require grad (empty tape)");
  }

  // Iterative post-order DFS for the topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.n->parents.size()) {
      detail::Node* p = top.n->parents[top.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(top.n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<std::shared_ptr<detail::Node>> parents,
               std::function<void(detail::Node&)> backward_fn) {
  bool track = false;
  for (const auto& p : parents) track = track || p->requires_grad;
  auto n = std::make_shared<detail::Node>();
  if (shape_numel(shape) != values.size()) {
    throw std::logic_error("make_op: inconsistent shape/value sizes");
  }
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = track;
  if (track) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

}  // namespace langdet
