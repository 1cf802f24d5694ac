#include "minivla/core/optim.hpp"

#include <cmath>

namespace minivla::core {

Tensor ParamStore::add(const std::string& name, const Shape& shape) {
  check(!has(name), "ParamStore: duplicate parameter " + name);
  Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
  items_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::add_xavier_uniform(const std::string& name, const Shape& shape,
                                      Rng& rng, double gain) {
  Tensor t = add(name, shape);
  check(shape.size() == 2, "xavier init expects a 2D weight: " + name);
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[1]);
  const double bound = gain * std::sqrt(6.0 / (fan_in + fan_out));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor ParamStore::add_uniform(const std::string& name, const Shape& shape, Rng& rng,
                               double range) {
  Tensor t = add(name, shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-range, range);
  return t;
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw Error("ParamStore: unknown parameter " + name);
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  check(items_.size() == other.items_.size(), "copy_values_from: store size mismatch");
  for (size_t i = 0; i < items_.size(); ++i) {
    check(items_[i].first == other.items_[i].first &&
              items_[i].second.shape() == other.items_[i].second.shape(),
          "copy_values_from: layout mismatch at " + items_[i].first);
    items_[i].second.vec() = other.items_[i].second.vec();
  }
}

AdamW::AdamW(ParamStore& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& [name, t] : params.items()) {
    m_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double lr = cfg_.schedule.at(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  size_t idx = 0;
  for (auto& [name, p] : const_cast<std::vector<std::pair<std::string, Tensor>>&>(
           params_.items())) {
    const double* g = p.grad();
    check(g != nullptr, "AdamW: parameter without grad buffer: " + name);
    double* m = m_[idx].data();
    double* v = v_[idx].data();
    double* w = p.data();
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i]))
        throw Error("AdamW: non-finite gradient in " + name);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
    ++idx;
  }
}

}  // namespace minivla::core
