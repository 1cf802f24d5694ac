#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "minivla/common.hpp"

namespace minivla::core {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One tape entry. `backward_fn` reads this node's grad and accumulates into
// the parents' grads; it is only set while gradients are enabled.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
};

// Value-semantic handle onto a tape node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double v, bool requires_grad = false);
  static Tensor from(const Shape& s, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  int64_t dim(size_t i) const { return n_->shape[i]; }
  int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
  // 2D views: a 1D tensor counts as a single row.
  int64_t rows() const { return rank() >= 2 ? n_->shape[0] : 1; }
  int64_t cols() const { return rank() >= 2 ? n_->shape[1] : (rank() == 1 ? n_->shape[0] : 1); }

  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  std::vector<double>& vec() { return n_->value; }
  const std::vector<double>& vec() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  double* grad() { return n_->requires_grad ? n_->grad.data() : nullptr; }
  const double* grad() const { return n_->requires_grad ? n_->grad.data() : nullptr; }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  // Reverse pass from a scalar node.
  void backward();

  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

// Disables tape recording within scope (inference paths, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Factory used by every op: creates the result node and wires the tape edge
// when gradients are enabled and at least one parent needs them.
Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn);

}  // namespace minivla::core
