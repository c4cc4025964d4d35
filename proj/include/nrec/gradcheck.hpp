#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "nrec/autodiff.hpp"

namespace nrec {

struct GradCheckStats {
  std::size_t elements = 0;
  std::size_t kinks = 0;  // elements whose +-eps interval straddles a ReLU/max kink
};

// Compares reverse-mode gradients of a scalar computation against central
// finite differences and returns
//   max_i |g_ad - g_fd| / max(1, |g_ad| + |g_fd|)
// over every trainable element of `params`.
// When the two one-sided slopes disagree by more than `kink_tol` the central
// estimate averages across a kink and is meaningless; such an element is
// compared against the closer one-sided slope instead (one side is smooth).
inline double gradient_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double eps = 1e-3,
                             GradCheckStats* stats = nullptr, double kink_tol = 1e-3) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = f(tape);
    if (out.value().size() != 1) throw ConfigError("gradient_check: computation output is not a scalar");
    tape.backward(out);
  }

  auto evaluate = [&f]() {
    Tape probe(false);
    return static_cast<double>(f(probe).scalar());
  };

  double worst = 0.0;
  for (Parameter* p : params) {
    const std::size_t cols = p->value.cols();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (!p->row_is_trainable(p->value.rank() >= 2 ? i / cols : 0)) continue;
      const float original = p->value.data[i];
      const float up = static_cast<float>(original + eps);
      const float down = static_cast<float>(original - eps);
      const double f_mid = evaluate();
      p->value.data[i] = up;
      const double f_up = evaluate();
      p->value.data[i] = down;
      const double f_down = evaluate();
      p->value.data[i] = original;
      const double fd = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double analytic = p->grad.data[i];
      auto rel = [&](double est) { return std::abs(analytic - est) / std::max(1.0, std::abs(analytic) + std::abs(est)); };
      double err = rel(fd);
      const double fwd = (f_up - f_mid) / (static_cast<double>(up) - original);
      const double bwd = (f_mid - f_down) / (original - static_cast<double>(down));
      if (std::abs(fwd - bwd) / std::max(1.0, std::abs(fwd) + std::abs(bwd)) > kink_tol) {
        err = std::min({err, rel(fwd), rel(bwd)});
        if (stats) ++stats->kinks;
      }
      if (stats) ++stats->elements;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace nrec
