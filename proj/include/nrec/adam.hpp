#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nrec/autodiff.hpp"

namespace nrec {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  explicit AdamState(AdamConfig c = {}) : config(c) {}
};

// One bias-corrected Adam update using the gradients stored in each
// parameter. Untrainable parameters and rows are left untouched.
inline void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Tensor::zeros(p->value.shape));
      state.second_moment.push_back(Tensor::zeros(p->value.shape));
    }
  }
  if (state.first_moment.size() != params.size()) throw InputError("adam_step: optimizer state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!p.grad.same_shape(p.value) || !state.first_moment[i].same_shape(p.value))
      throw InputError("adam_step: shape mismatch for parameter '" + p.name + "'");
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) continue;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const std::size_t cols = p.value.cols();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      if (!p.row_trainable.empty() && !p.row_is_trainable(p.value.rank() >= 2 ? j / cols : 0)) continue;
      const double g = p.grad.data[j];
      const double mj = c.beta1 * m.data[j] + (1.0 - c.beta1) * g;
      const double vj = c.beta2 * v.data[j] + (1.0 - c.beta2) * g * g;
      m.data[j] = static_cast<float>(mj);
      v.data[j] = static_cast<float>(vj);
      const double update = c.lr * (mj / correction1) / (std::sqrt(vj / correction2) + c.eps);
      p.value.data[j] = static_cast<float>(p.value.data[j] - update);
    }
  }
}

}  // namespace nrec
