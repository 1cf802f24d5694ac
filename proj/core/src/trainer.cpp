#include "minivla/vla/trainer.hpp"

#include <cmath>
#include <iostream>

namespace minivla::vla {

namespace {
core::AdamWConfig make_opt_config(const TrainConfig& cfg) {
  core::AdamWConfig oc;
  oc.schedule.base_lr = cfg.lr;
  oc.schedule.warmup_steps = cfg.warmup_steps;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  oc.eps = cfg.eps;
  oc.weight_decay = cfg.weight_decay;
  return oc;
}
}  // namespace

Trainer::Trainer(VlaModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), opt_(model.params(), make_opt_config(cfg)) {}

void Trainer::run(const SampleFn& next_sample, int64_t n_steps) {
  for (int64_t s = 0; s < n_steps; ++s) {
    std::vector<TrainSample> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int64_t b = 0; b < cfg_.batch_size; ++b) batch.push_back(next_sample());
    std::vector<const TrainSample*> ptrs;
    for (const auto& ts : batch) ptrs.push_back(&ts);

    model_.params().zero_grad();
    core::Tensor loss = model_.loss(ptrs);
    last_loss_ = loss.item();
    check(std::isfinite(last_loss_), "train: non-finite loss at step " +
                                         std::to_string(opt_.step_count() + 1));
    loss.backward();
    opt_.step();

    if (cfg_.log_every > 0 && (opt_.step_count() % cfg_.log_every == 0 || s + 1 == n_steps))
      std::cerr << "[train] step " << opt_.step_count() << " loss " << last_loss_
                << " lr " << opt_.config().schedule.at(opt_.step_count()) << "\n";
  }
}

}  // namespace minivla::vla
