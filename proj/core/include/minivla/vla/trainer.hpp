#pragma once

#include <functional>

#include "minivla/core/optim.hpp"
#include "minivla/vla/formulation.hpp"

namespace minivla::vla {

struct TrainConfig {
  int64_t steps = 1000;
  int64_t batch_size = 8;
  double lr = 1e-3;
  int64_t warmup_steps = 0;  // linear warmup, then constant
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t log_every = 100;
};

// Plain behavior-cloning loop: pull windows, minimize the formulation loss.
// Single-threaded and bit-deterministic given the sampler's seed.
class Trainer {
 public:
  Trainer(VlaModel& model, const TrainConfig& cfg);

  using SampleFn = std::function<TrainSample()>;
  void run(const SampleFn& next_sample, int64_t n_steps);

  core::AdamW& optimizer() { return opt_; }
  double last_loss() const { return last_loss_; }

 private:
  VlaModel& model_;
  TrainConfig cfg_;
  core::AdamW opt_;
  double last_loss_ = 0.0;
};

}  // namespace minivla::vla
