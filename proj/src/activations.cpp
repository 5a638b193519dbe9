#include "tembed/activations.hpp"

namespace tembed {

const char* activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::ReLU:
      return "relu";
    case ActivationKind::SiLU:
      return "silu";
    case ActivationKind::Swish:
      return "swish";
    case ActivationKind::ELU:
      return "elu";
    case ActivationKind::Softplus:
      return "softplus";
    case ActivationKind::Sigmoid:
      return "sigmoid";
  }
  return "?";
}

ActivationKind activation_from_name(const std::string& name) {
  if (name == "relu") return ActivationKind::ReLU;
  if (name == "silu") return ActivationKind::SiLU;
  if (name == "swish") return ActivationKind::Swish;
  if (name == "elu") return ActivationKind::ELU;
  if (name == "softplus") return ActivationKind::Softplus;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  throw ConfigError("unknown activation '" + name +
                    "' (expected relu, silu, swish, elu, softplus, sigmoid)");
}

Tensor apply_activation(ActivationKind k, const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = activation_value(k, out[i]);
  return out;
}

}  // namespace tembed
