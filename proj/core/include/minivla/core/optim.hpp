#pragma once

#include <string>
#include <utility>
#include <vector>

#include "minivla/core/rng.hpp"
#include "minivla/core/tensor.hpp"

namespace minivla::core {

// Named parameter registry. Registration order is the canonical order for
// init draws, optimizer updates and checkpoint layout, so identical
// construction code yields bit-identical models.
class ParamStore {
 public:
  Tensor add(const std::string& name, const Shape& shape);
  Tensor add_xavier_uniform(const std::string& name, const Shape& shape, Rng& rng,
                            double gain);
  Tensor add_uniform(const std::string& name, const Shape& shape, Rng& rng,
                     double range);

  bool has(const std::string& name) const;
  Tensor get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  int64_t total_elements() const;
  void zero_grad();
  // Overwrites values from another store with identical layout.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Constant learning rate after linear warmup.
struct LrSchedule {
  double base_lr = 1e-3;
  int64_t warmup_steps = 0;

  double at(int64_t step) const {  // step counts from 1
    if (warmup_steps > 0 && step <= warmup_steps)
      return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return base_lr;
  }
};

struct AdamWConfig {
  LrSchedule schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay Adam over a ParamStore. Throws on non-finite
// gradients so bad losses never reach the parameters.
class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig cfg);

  void step();
  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Checkpoint access.
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  ParamStore& params_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace minivla::core
