#include "tembed/tensor.hpp"

#include <cmath>
#include <limits>

namespace tembed {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" +
         std::to_string(h) + "x" + std::to_string(w);
}

Tensor::Tensor(Shape s) : shape_(s) {
  // c == 0 is allowed so concat_channels has an identity element.
  if (s.n <= 0 || s.c < 0 || s.h <= 0 || s.w <= 0) {
    throw ConfigError("tensor shape must be positive in every dimension, got " +
                      s.str());
  }
  data_.assign(s.numel(), 0.0);
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(s);
  for (auto& x : t.data_) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

static void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() +
                      " vs " + b.shape().str());
  }
}

void add_inplace(Tensor& dst, const Tensor& src) {
  check_same_shape(dst, src, "add_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void axpy_inplace(Tensor& dst, double a, const Tensor& src) {
  check_same_shape(dst, src, "axpy_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

void scale_inplace(Tensor& dst, double a) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= a;
}

double dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sum_all(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value in ") + what);
  }
}

void require_shape(const Tensor& t, Shape expect, const char* what) {
  if (!(t.shape() == expect)) {
    throw ConfigError(std::string(what) + ": expected shape " + expect.str() +
                      ", got " + t.shape().str());
  }
}

double Rng::uniform() {
  // 53-bit mantissa, uniform on [0, 1).
  return static_cast<double>(raw() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller. u1 is shifted into (0, 1] so log stays finite.
  double u1 = (static_cast<double>(raw() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

static std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::fork(const std::string& label) const {
  // FNV-1a over the label, mixed with the base seed via splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return Rng(splitmix64(seed_ ^ h));
}

void Rng::fill_normal(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
}

}  // namespace tembed
