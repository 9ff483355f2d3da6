#include "wecar/core/adam.hpp"

#include <cmath>

#include "wecar/core/errors.hpp"

namespace wecar::core {

void Adam::step(std::span<Param* const> params) {
  for (const Param* p : params) {
    if (p->trainable && !p->has_grad) {
      throw StateError("adam_step: param '" + p->name + "' has no gradient; run backward first");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));

  for (Param* p : params) {
    if (!p->trainable) continue;
    auto [it, fresh] = state_.try_emplace(p);
    Moments& mom = it->second;
    if (fresh || !mom.m.same_shape(p->value)) {
      mom.m = Tensor2(p->value.rows(), p->value.cols());
      mom.v = Tensor2(p->value.rows(), p->value.cols());
    }
    const Tensor2* mask = p->grad_mask ? &*p->grad_mask : nullptr;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (mask && (*mask)[i] == 0.0) continue;
      const double g = p->grad[i];
      mom.m[i] = opts_.beta1 * mom.m[i] + (1.0 - opts_.beta1) * g;
      mom.v[i] = opts_.beta2 * mom.v[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      const double next = p->value[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      p->value[i] = static_cast<double>(static_cast<float>(next));
    }
    p->zero_grad();
  }
}

}  // namespace wecar::core
