#pragma once

#include <functional>
#include <string>

#include "minivla/core/optim.hpp"
#include "minivla/core/tensor.hpp"

namespace minivla::core {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences against the tape, entry by entry, over every
// registered parameter. loss_fn must rebuild the graph deterministically on
// each call (no internal RNG draws).
GradCheckResult grad_check(ParamStore& params,
                           const std::function<Tensor()>& loss_fn,
                           double h = 1e-5);

}  // namespace minivla::core
