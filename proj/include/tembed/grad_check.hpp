#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tembed/errors.hpp"

namespace tembed {

// Central-difference gradient oracle: (f(x+h*e_i) - f(x-h*e_i)) / 2h.
// Independent of the tape on purpose; it cross-checks backward().
inline std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad needs h > 0");
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double orig = theta[i];
    theta[i] = orig + h;
    double fp = f(theta);
    theta[i] = orig - h;
    double fm = f(theta);
    theta[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, 1). The 1 in the denominator keeps
// near-zero gradients from blowing up the relative measure.
inline double max_rel_error(std::span<const double> a,
                            std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("max_rel_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace tembed
