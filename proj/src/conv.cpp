#include "tembed/conv.hpp"

namespace tembed {

const char* padding_name(Padding p) {
  return p == Padding::Valid ? "valid" : "same_zero";
}

Padding padding_from_name(const std::string& name) {
  if (name == "valid") return Padding::Valid;
  if (name == "same_zero") return Padding::SameZero;
  throw ConfigError("unknown padding '" + name +
                    "' (expected 'valid' or 'same_zero')");
}

ConvDims conv_dims(Shape x, Shape kernel, Padding padding) {
  ConvDims d{};
  d.n = x.n;
  d.cin = x.c;
  d.hin = x.h;
  d.win = x.w;
  d.cout = kernel.n;
  d.k = kernel.h;
  if (kernel.h != kernel.w) {
    throw ConfigError("conv kernel must be square, got " + kernel.str());
  }
  if (d.k != 1 && d.k != 3 && d.k != 5) {
    throw ConfigError("conv kernel size must be 1, 3, or 5, got " +
                      std::to_string(d.k));
  }
  if (kernel.c != x.c) {
    throw ConfigError("conv input has " + std::to_string(x.c) +
                      " channels but kernel expects " +
                      std::to_string(kernel.c));
  }
  if (padding == Padding::SameZero) {
    d.pad = (d.k - 1) / 2;
    d.hout = d.hin;
    d.wout = d.win;
  } else {
    d.pad = 0;
    d.hout = d.hin - (d.k - 1);
    d.wout = d.win - (d.k - 1);
    if (d.hout <= 0 || d.wout <= 0) {
      throw ConfigError("valid-padding conv needs input of at least " +
                        std::to_string(d.k) + "x" + std::to_string(d.k) +
                        ", got " + std::to_string(d.hin) + "x" +
                        std::to_string(d.win));
    }
  }
  return d;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias,
              Padding padding) {
  ConvDims d = conv_dims(x.shape(), kernel.shape(), padding);
  if (bias) {
    require_shape(*bias, Shape{1, d.cout, 1, 1}, "conv bias");
  }
  Tensor out(Shape{d.n, d.cout, d.hout, d.wout});
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.cout; ++co) {
      double b = bias ? bias->at(0, co, 0, 0) : 0.0;
      for (int ho = 0; ho < d.hout; ++ho) {
        for (int wo = 0; wo < d.wout; ++wo) {
          double acc = b;
          for (int ci = 0; ci < d.cin; ++ci) {
            for (int kh = 0; kh < d.k; ++kh) {
              int hi = ho + kh - d.pad;
              if (hi < 0 || hi >= d.hin) continue;
              for (int kw = 0; kw < d.k; ++kw) {
                int wi = wo + kw - d.pad;
                if (wi < 0 || wi >= d.win) continue;
                acc += x.at(n, ci, hi, wi) * kernel.at(co, ci, kh, kw);
              }
            }
          }
          out.at(n, co, ho, wo) = acc;
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& kernel, Padding padding,
                     const Tensor& gout, Tensor* gx, Tensor* gkernel,
                     Tensor* gbias) {
  ConvDims d = conv_dims(x.shape(), kernel.shape(), padding);
  require_shape(gout, Shape{d.n, d.cout, d.hout, d.wout}, "conv grad output");
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.cout; ++co) {
      for (int ho = 0; ho < d.hout; ++ho) {
        for (int wo = 0; wo < d.wout; ++wo) {
          double g = gout.at(n, co, ho, wo);
          if (gbias) gbias->at(0, co, 0, 0) += g;
          if (!gx && !gkernel) continue;
          for (int ci = 0; ci < d.cin; ++ci) {
            for (int kh = 0; kh < d.k; ++kh) {
              int hi = ho + kh - d.pad;
              if (hi < 0 || hi >= d.hin) continue;
              for (int kw = 0; kw < d.k; ++kw) {
                int wi = wo + kw - d.pad;
                if (wi < 0 || wi >= d.win) continue;
                if (gx) gx->at(n, ci, hi, wi) += kernel.at(co, ci, kh, kw) * g;
                if (gkernel)
                  gkernel->at(co, ci, kh, kw) += x.at(n, ci, hi, wi) * g;
              }
            }
          }
        }
      }
    }
  }
}

Tensor concat_channels_eval(const Tensor& x, const Tensor& y) {
  Shape xs = x.shape(), ys = y.shape();
  if (xs.n != ys.n || xs.h != ys.h || xs.w != ys.w) {
    throw ConfigError("concat_channels: batch/spatial mismatch " + xs.str() +
                      " vs " + ys.str());
  }
  Tensor out(Shape{xs.n, xs.c + ys.c, xs.h, xs.w});
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c)
      for (int h = 0; h < xs.h; ++h)
        for (int w = 0; w < xs.w; ++w)
          out.at(n, c, h, w) = x.at(n, c, h, w);
    for (int c = 0; c < ys.c; ++c)
      for (int h = 0; h < xs.h; ++h)
        for (int w = 0; w < xs.w; ++w)
          out.at(n, xs.c + c, h, w) = y.at(n, c, h, w);
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  Shape s = x.shape();
  if (c0 < 0 || c1 < c0 || c1 > s.c) {
    throw ConfigError("slice_channels: range [" + std::to_string(c0) + ", " +
                      std::to_string(c1) + ") out of bounds for C=" +
                      std::to_string(s.c));
  }
  Tensor out(Shape{s.n, c1 - c0, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = c0; c < c1; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          out.at(n, c - c0, h, w) = x.at(n, c, h, w);
  return out;
}

}  // namespace tembed
