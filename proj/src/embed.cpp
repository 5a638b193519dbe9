#include "tembed/embed.hpp"

#include <cmath>

namespace tembed {

Tensor concat_conv(const Tensor& x, double t, const ConcatConvParams& params) {
  Shape s = x.shape();
  if (params.kernel.shape().c != s.c + 1) {
    throw ConfigError("concat_conv kernel expects " +
                      std::to_string(params.kernel.shape().c - 1) +
                      " input channels, got " + std::to_string(s.c));
  }
  Tensor plane = Tensor::full(Shape{s.n, 1, s.h, s.w}, t);
  Tensor xt = concat_channels_eval(x, plane);
  return conv2d(xt, params.kernel, params.bias ? &*params.bias : nullptr,
                params.padding);
}

DecomposedParams decompose_concat_conv(const ConcatConvParams& params) {
  Shape ks = params.kernel.shape();
  int cin = ks.c - 1;
  if (cin < 1) {
    throw ConfigError("concat_conv kernel needs at least 2 input slices");
  }
  DecomposedParams d;
  d.reduced_kernel = Tensor(Shape{ks.n, cin, ks.h, ks.w});
  d.offset = Tensor(Shape{1, ks.n, 1, 1});
  for (int co = 0; co < ks.n; ++co) {
    for (int ci = 0; ci < cin; ++ci)
      for (int kh = 0; kh < ks.h; ++kh)
        for (int kw = 0; kw < ks.w; ++kw)
          d.reduced_kernel.at(co, ci, kh, kw) =
              params.kernel.at(co, ci, kh, kw);
    double sum = 0.0;
    for (int kh = 0; kh < ks.h; ++kh)
      for (int kw = 0; kw < ks.w; ++kw)
        sum += params.kernel.at(co, cin, kh, kw);
    d.offset.at(0, co, 0, 0) = sum;
  }
  return d;
}

void validate_sinusoidal(const SinusoidalSpec& spec) {
  if (spec.dim < 2 || spec.dim % 2 != 0) {
    throw ConfigError("sinusoidal dim must be even and >= 2, got " +
                      std::to_string(spec.dim));
  }
  if (spec.base <= 0.0) {
    throw ConfigError("sinusoidal base must be positive");
  }
}

Tensor sinusoidal_features(double t, const SinusoidalSpec& spec) {
  validate_sinusoidal(spec);
  int half = spec.dim / 2;
  Tensor out(Shape{1, spec.dim, 1, 1});
  for (int i = 0; i < half; ++i) {
    double w = std::pow(spec.base, -static_cast<double>(i) / half);
    out.at(0, i, 0, 0) = std::sin(w * t);
    out.at(0, half + i, 0, 0) = std::cos(w * t);
  }
  return out;
}

Tensor mlp_affine(const MlpBranch& m, const Tensor& in) {
  return conv2d(in, m.w, &m.b, Padding::Valid);
}

static Tensor mlp_hidden(double t, const EmbedMlp& mlp,
                         const SinusoidalSpec& spec) {
  Tensor z = mlp_affine(mlp.trunk, sinusoidal_features(t, spec));
  return apply_activation(mlp.act, z);
}

Tensor embed_channel(double t, const EmbedMlp& mlp,
                     const SinusoidalSpec& spec) {
  if (!mlp.channel_head) {
    throw ConfigError("embed MLP has no channel head");
  }
  return mlp_affine(*mlp.channel_head, mlp_hidden(t, mlp, spec));
}

Tensor embed_positional_mlp(double t, const EmbedMlp& mlp,
                            const SinusoidalSpec& spec) {
  if (!mlp.pos_head) {
    throw ConfigError("embed MLP has no positional head");
  }
  Tensor flat = mlp_affine(*mlp.pos_head, mlp_hidden(t, mlp, spec));
  if (flat.shape().c != mlp.out_h * mlp.out_w) {
    throw ConfigError("positional head produces " +
                      std::to_string(flat.shape().c) + " values for a " +
                      std::to_string(mlp.out_h) + "x" +
                      std::to_string(mlp.out_w) + " map");
  }
  Tensor out(Shape{1, 1, mlp.out_h, mlp.out_w});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = flat[i];
  return out;
}

Tensor embed_positional_linear(double t, const Tensor& p) {
  Shape s = p.shape();
  if (s.n != 1 || s.c != 1) {
    throw ConfigError("linear positional parameter must be (1,1,H,W), got " +
                      s.str());
  }
  Tensor out = p;
  scale_inplace(out, t);
  return out;
}

}  // namespace tembed
