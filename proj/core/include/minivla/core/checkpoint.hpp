#pragma once

#include <string>

#include "minivla/core/optim.hpp"

namespace minivla::core {

// Versioned binary checkpoint: named fp64 parameter tensors plus, optionally,
// the AdamW moments and step counter. Byte layout (little endian):
//
//   magic   "MVLACP01"                           8 bytes
//   u64     n_params
//   per parameter, in registry order:
//     u32 name_len, name bytes, u32 ndim, u64 dims[ndim], f64 values[numel]
//   u8      has_optimizer
//   if has_optimizer:
//     u64 step, f64 base_lr, u64 warmup_steps,
//     f64 beta1, f64 beta2, f64 eps, f64 weight_decay,
//     per parameter: f64 m[numel], f64 v[numel]
//
// Raw IEEE doubles in and out, so save/load round-trips bitwise.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const AdamW* opt = nullptr);

// Loads into an already-constructed store; names, order and shapes must match
// the file exactly. opt, when given, must wrap the same store.
void load_checkpoint(const std::string& path, ParamStore& params,
                     AdamW* opt = nullptr);

// True when the file carries optimizer state.
bool checkpoint_has_optimizer(const std::string& path);

}  // namespace minivla::core
