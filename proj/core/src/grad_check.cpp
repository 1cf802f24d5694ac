#include "minivla/core/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "minivla/core/ops.hpp"

namespace minivla::core {

GradCheckResult grad_check(ParamStore& params,
                           const std::function<Tensor()>& loss_fn, double h) {
  params.zero_grad();
  Tensor loss = loss_fn();
  check(loss.numel() == 1, "grad_check: loss must be scalar");
  check(std::isfinite(loss.item()), "grad_check: non-finite loss");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params.items()) {
    const double* g = p.grad();
    check(g != nullptr, "grad_check: parameter lacks grad: " + name);
    analytic.emplace_back(g, g + p.numel());
  }

  GradCheckResult res;
  size_t idx = 0;
  for (auto& [name, p] : const_cast<std::vector<std::pair<std::string, Tensor>>&>(
           params.items())) {
    double* w = p.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double v0 = w[i];
      double fp, fm;
      {
        NoGradGuard ng;
        w[i] = v0 + h;
        fp = loss_fn().item();
        w[i] = v0 - h;
        fm = loss_fn().item();
        w[i] = v0;
      }
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[idx][static_cast<size_t>(i)];
      // The 1e-3 denominator floor turns the check into an absolute bound of
      // tol*1e-3 for near-zero gradients, where central differences are pure
      // roundoff/truncation noise.
      const double denom = std::max({std::fabs(ana), std::fabs(num), 1e-3});
      const double rel = std::fabs(ana - num) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name;
        res.worst_index = i;
        res.analytic = ana;
        res.numeric = num;
      }
    }
    ++idx;
  }
  return res;
}

}  // namespace minivla::core
