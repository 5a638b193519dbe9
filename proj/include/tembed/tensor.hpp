#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tembed/errors.hpp"

namespace tembed {

// Dense 4-d shape (batch, channels, height, width). Kernels reuse it as
// (out_channels, in_channels, k, k).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  bool operator==(const Shape&) const = default;
  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::string str() const;
};

// Row-major double tensor, value semantics. All shape checks throw
// ConfigError so callers get actionable messages instead of UB.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s);

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, double v);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }

  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

// In-place elementwise helpers. Shapes must match exactly.
void add_inplace(Tensor& dst, const Tensor& src);
void axpy_inplace(Tensor& dst, double a, const Tensor& src);  // dst += a*src
void scale_inplace(Tensor& dst, double a);

double dot(const Tensor& a, const Tensor& b);
double sum_all(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);

// Throws NumericError naming `what` if any element is NaN or infinite.
void require_finite(const Tensor& t, const char* what);
void require_shape(const Tensor& t, Shape expect, const char* what);

// Deterministic RNG. Wraps mt19937_64 (bit-exact across platforms) and
// derives doubles without std::uniform_real_distribution, whose output is
// implementation-defined. normal() uses Box-Muller with a cached spare.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t raw() { return gen_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();

  // Independent stream keyed by a label, so adding a consumer never
  // perturbs draws elsewhere.
  Rng fork(const std::string& label) const;

  std::uint64_t seed() const { return seed_; }

  void fill_normal(Tensor& t);
  void fill_uniform(Tensor& t, double lo, double hi);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tembed
