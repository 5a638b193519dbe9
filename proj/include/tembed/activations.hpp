#pragma once

#include <cmath>
#include <string>

#include "tembed/errors.hpp"
#include "tembed/tensor.hpp"

namespace tembed {

enum class ActivationKind { ReLU, SiLU, Swish, ELU, Softplus, Sigmoid };

const char* activation_name(ActivationKind k);
ActivationKind activation_from_name(const std::string& name);

// Numerically safe logistic: never overflows exp.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // max(x,0) + log1p(exp(-|x|)) is exact and overflow-free.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double activation_value(ActivationKind k, double x) {
  switch (k) {
    case ActivationKind::ReLU:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::SiLU:
    case ActivationKind::Swish:
      return x * sigmoid(x);
    case ActivationKind::ELU:
      return x > 0.0 ? x : std::expm1(x);
    case ActivationKind::Softplus:
      return softplus(x);
    case ActivationKind::Sigmoid:
      return sigmoid(x);
  }
  throw ConfigError("unknown activation kind");
}

// Derivative w.r.t. x. ReLU uses the subgradient 0 at x == 0.
inline double activation_deriv(ActivationKind k, double x) {
  switch (k) {
    case ActivationKind::ReLU:
      return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::SiLU:
    case ActivationKind::Swish: {
      double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
    case ActivationKind::ELU:
      return x > 0.0 ? 1.0 : std::exp(x);
    case ActivationKind::Softplus:
      return sigmoid(x);
    case ActivationKind::Sigmoid: {
      double s = sigmoid(x);
      return s * (1.0 - s);
    }
  }
  throw ConfigError("unknown activation kind");
}

Tensor apply_activation(ActivationKind k, const Tensor& x);

}  // namespace tembed
