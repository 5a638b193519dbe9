#pragma once

#include <optional>

#include "tembed/activations.hpp"
#include "tembed/conv.hpp"
#include "tembed/tensor.hpp"

namespace tembed {

// Convolution over [X ; tJ]: the feature map with a constant-t plane
// appended as the last channel. kernel is (C_out, C_in+1, k, k).
struct ConcatConvParams {
  Tensor kernel;
  std::optional<Tensor> bias;  // (1, C_out, 1, 1)
  Padding padding = Padding::Valid;
};

// Algebraic split of a ConcatConv kernel: the leading C_in slices form a
// plain kernel, and the timestep slice collapses to one offset value per
// output channel (its spatial sum), because it only ever multiplies the
// constant t. Exact under valid padding.
struct DecomposedParams {
  Tensor reduced_kernel;  // (C_out, C_in, k, k)
  Tensor offset;          // v: (1, C_out, 1, 1); the block adds t*v
};

Tensor concat_conv(const Tensor& x, double t, const ConcatConvParams& params);
DecomposedParams decompose_concat_conv(const ConcatConvParams& params);

// Sinusoidal features: [sin(w_0 t) .. sin(w_{d/2-1} t), cos(w_0 t) ..],
// w_i = base^(-i / (d/2)).
struct SinusoidalSpec {
  int dim = 32;
  double base = 10000.0;
};

void validate_sinusoidal(const SinusoidalSpec& spec);
Tensor sinusoidal_features(double t, const SinusoidalSpec& spec);  // (1,d,1,1)

// One affine layer stored as a 1x1 conv: w (out, in, 1, 1), b (1, out, 1, 1).
struct MlpBranch {
  Tensor w;
  Tensor b;
};

Tensor mlp_affine(const MlpBranch& m, const Tensor& in);

// Two-layer MLP over the sinusoidal features with up to two output heads
// reading the same hidden vector: a channel head producing v_t (one value
// per channel) and a positional head producing p_t (one value per spatial
// position, shared across channels).
struct EmbedMlp {
  MlpBranch trunk;  // d -> hidden
  std::optional<MlpBranch> channel_head;
  std::optional<MlpBranch> pos_head;
  ActivationKind act = ActivationKind::ReLU;
  int out_h = 0, out_w = 0;  // geometry of the positional head output
};

Tensor embed_channel(double t, const EmbedMlp& mlp,
                     const SinusoidalSpec& spec);  // (1, C, 1, 1)
Tensor embed_positional_mlp(double t, const EmbedMlp& mlp,
                            const SinusoidalSpec& spec);  // (1, 1, H, W)
Tensor embed_positional_linear(double t, const Tensor& p);  // t*p

}  // namespace tembed
