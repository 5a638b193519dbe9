#pragma once

#include <optional>
#include <string>

#include "tembed/tensor.hpp"

namespace tembed {

enum class Padding { Valid, SameZero };

const char* padding_name(Padding p);
Padding padding_from_name(const std::string& name);

// Resolved geometry of one convolution. Kernel tensors use shape
// (C_out, C_in, k, k); bias tensors use (1, C_out, 1, 1).
struct ConvDims {
  int n, cin, hin, win;
  int cout, k, pad;
  int hout, wout;
};

// Validates shapes (k odd, k in {1,3,5}, channel match, Valid fits) and
// returns the output geometry. Throws ConfigError naming the violation.
ConvDims conv_dims(Shape x, Shape kernel, Padding padding);

// Cross-correlation, stride 1. bias may be null.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias,
              Padding padding);

// Accumulates into any non-null gradient output (callers pass zeroed
// tensors of the right shape).
void conv2d_backward(const Tensor& x, const Tensor& kernel, Padding padding,
                     const Tensor& gout, Tensor* gx, Tensor* gkernel,
                     Tensor* gbias);

Tensor concat_channels_eval(const Tensor& x, const Tensor& y);

// Channels [c0, c1) of x as a new tensor.
Tensor slice_channels(const Tensor& x, int c0, int c1);

}  // namespace tembed
