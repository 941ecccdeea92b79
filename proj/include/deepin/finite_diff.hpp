#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "deepin/matrix.hpp"

namespace deepin {

/// Central-difference gradient, the oracle every analytic gradient is checked against.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw contract_violation("finite_diff_grad: h must be > 0");
  Vec g(x.size(), 0.0);
  Vec xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw numerical_failure("finite_diff_grad: non-finite value at coordinate " +
                              std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace deepin
