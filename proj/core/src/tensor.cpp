#include "minivla/core/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace minivla::core {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->value.assign(static_cast<size_t>(shape_numel(s)), 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return Tensor(n);
}

Tensor Tensor::full(const Shape& s, double v, bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  for (auto& x : t.n_->value) x = v;
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> data, bool requires_grad) {
  check(static_cast<int64_t>(data.size()) == shape_numel(s),
        "Tensor::from: data size does not match shape " + shape_str(s));
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

void Tensor::zero_grad() {
  if (n_ && n_->requires_grad) n_->grad.assign(n_->value.size(), 0.0);
}

double Tensor::item() const {
  check(n_ && n_->value.size() == 1, "item() requires a single-element tensor");
  return n_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  check(idx.size() == n_->shape.size(), "at(): index rank mismatch");
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    off = off * n_->shape[k] + i;
    ++k;
  }
  return n_->value[static_cast<size_t>(off)];
}

void Tensor::backward() {
  check(n_ != nullptr, "backward() on undefined tensor");
  check(n_->value.size() == 1, "backward() requires a scalar loss");
  check(n_->requires_grad, "backward() on a tensor that does not require grad");

  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({n_.get(), 0});
  visited.insert(n_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  n_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0);
  if (grad_enabled()) {
    bool rg = false;
    for (const auto& p : parents)
      if (p.requires_grad()) rg = true;
    if (rg) {
      n->requires_grad = true;
      n->grad.assign(n->value.size(), 0.0);
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(n);
}

}  // namespace minivla::core
