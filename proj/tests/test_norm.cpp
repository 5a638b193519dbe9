#include <doctest.h>

#include <cmath>
#include <vector>

#include "tembed/norm.hpp"
#include "tembed/tape.hpp"
#include "tembed/tensor.hpp"

using namespace tembed;

namespace {

Tensor randn(Shape s, std::uint64_t seed) {
  Tensor t(s);
  Rng rng(seed);
  rng.fill_normal(t);
  return t;
}

// Offset with one distinct value per channel, broadcast like v_t.
Tensor add_per_channel(const Tensor& x, double scale) {
  Tensor y = x;
  Shape s = x.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          y.at(n, c, h, w) += scale * (c + 1);
  return y;
}

}  // namespace

TEST_CASE("channels_per_unit table") {
  CHECK(channels_per_unit({NormKind::Batch, 1, 1e-5, true}, 16) == 1);
  CHECK(channels_per_unit({NormKind::Instance, 1, 1e-5, true}, 16) == 1);
  CHECK(channels_per_unit({NormKind::Layer, 1, 1e-5, true}, 16) == 16);
  CHECK(channels_per_unit({NormKind::Group, 4, 1e-5, true}, 16) == 4);
  CHECK(channels_per_unit({NormKind::Group, 16, 1e-5, true}, 16) == 1);
}

TEST_CASE("validate_norm rejects bad group counts") {
  CHECK_THROWS_AS(validate_norm({NormKind::Group, 3, 1e-5, true}, 16),
                  ConfigError);
  CHECK_THROWS_AS(validate_norm({NormKind::Group, 0, 1e-5, true}, 16),
                  ConfigError);
  CHECK_THROWS_AS(validate_norm({NormKind::Group, 32, 1e-5, true}, 16),
                  ConfigError);
  validate_norm({NormKind::Group, 8, 1e-5, true}, 16);
}

TEST_CASE("unit map partitions (n, c) as documented") {
  Shape s{2, 8, 3, 3};
  UnitMap bn = make_unit_map(s, {NormKind::Batch, 1, 1e-5, true});
  CHECK(bn.num_units == 8);
  CHECK(bn.unit_size == 2u * 3 * 3);
  CHECK(bn.unit_of(0, 5) == bn.unit_of(1, 5));
  CHECK(bn.unit_of(0, 2) != bn.unit_of(0, 3));

  UnitMap in = make_unit_map(s, {NormKind::Instance, 1, 1e-5, true});
  CHECK(in.num_units == 16);
  CHECK(in.unit_size == 9u);
  CHECK(in.unit_of(0, 5) != in.unit_of(1, 5));

  UnitMap ln = make_unit_map(s, {NormKind::Layer, 1, 1e-5, true});
  CHECK(ln.num_units == 2);
  CHECK(ln.unit_of(0, 0) == ln.unit_of(0, 7));

  UnitMap gn = make_unit_map(s, {NormKind::Group, 4, 1e-5, true});
  CHECK(gn.num_units == 8);
  CHECK(gn.unit_of(0, 0) == gn.unit_of(0, 1));
  CHECK(gn.unit_of(0, 1) != gn.unit_of(0, 2));
}

TEST_CASE("each unit is standardized") {
  Shape s{3, 8, 5, 5};
  Tensor x = randn(s, 7);
  scale_inplace(x, 2.5);  // non-unit input scale
  for (NormSpec spec : {NormSpec{NormKind::Batch, 1, 1e-5, false},
                        NormSpec{NormKind::Instance, 1, 1e-5, false},
                        NormSpec{NormKind::Layer, 1, 1e-5, false},
                        NormSpec{NormKind::Group, 4, 1e-5, false}}) {
    Tensor y = norm_forward(x, spec, nullptr, nullptr, nullptr);
    UnitMap um = make_unit_map(s, spec);
    std::vector<double> mean(um.num_units, 0.0), sq(um.num_units, 0.0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        int u = um.unit_of(n, c);
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            double v = y.at(n, c, h, w);
            mean[u] += v;
            sq[u] += v * v;
          }
      }
    for (int u = 0; u < um.num_units; ++u) {
      double m = mean[u] / um.unit_size;
      double var = sq[u] / um.unit_size - m * m;
      CHECK(std::abs(m) < 1e-12);
      CHECK(std::abs(var - 1.0) < 1e-3);  // eps keeps it just under 1
    }
  }
}

TEST_CASE("affine parameters rescale and shift") {
  Shape s{2, 4, 3, 3};
  Tensor x = randn(s, 9);
  Tensor gamma(Shape{1, 4, 1, 1}), beta(Shape{1, 4, 1, 1});
  for (int c = 0; c < 4; ++c) {
    gamma.at(0, c, 0, 0) = 0.5 + c;
    beta.at(0, c, 0, 0) = -1.0 * c;
  }
  NormSpec spec{NormKind::Instance, 1, 1e-5, true};
  Tensor plain = norm_forward(x, spec, nullptr, nullptr, nullptr);
  Tensor affine = norm_forward(x, spec, &gamma, &beta, nullptr);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < 4; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          CHECK(affine.at(n, c, h, w) ==
                doctest::Approx(plain.at(n, c, h, w) * (0.5 + c) - 1.0 * c)
                    .epsilon(1e-12));
}

TEST_CASE("per-channel offsets cancel under batch and instance norm") {
  Shape s{4, 6, 5, 5};
  Tensor x = randn(s, 13);
  Tensor shifted = add_per_channel(x, 0.7);
  for (NormKind kind : {NormKind::Batch, NormKind::Instance}) {
    NormSpec spec{kind, 1, 1e-5, false};
    Tensor a = norm_forward(x, spec, nullptr, nullptr, nullptr);
    Tensor b = norm_forward(shifted, spec, nullptr, nullptr, nullptr);
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("offset gradient is zero through batch and instance norm") {
  Shape s{3, 5, 4, 4};
  Tensor x = randn(s, 17);
  Tensor w = randn(s, 18);
  for (NormKind kind : {NormKind::Batch, NormKind::Instance}) {
    Tape tp;
    Var xv = tp.leaf(x, false);
    Var off = tp.leaf(randn({1, 5, 1, 1}, 19), true);
    Var shifted = add_channel_offset(tp, xv, off);
    Var y = normalize(tp, shifted, {kind, 1, 1e-5, false});
    Var loss = weighted_sum(tp, y, w);
    tp.backward(loss);
    CHECK(max_abs(tp.grad(off)) < 1e-12);
  }
}

TEST_CASE("offsets survive group and layer norm") {
  Shape s{4, 8, 5, 5};
  Tensor x = randn(s, 23);
  Tensor shifted = add_per_channel(x, 0.7);
  for (NormSpec spec : {NormSpec{NormKind::Group, 4, 1e-5, false},
                        NormSpec{NormKind::Layer, 1, 1e-5, false}}) {
    Tensor a = norm_forward(x, spec, nullptr, nullptr, nullptr);
    Tensor b = norm_forward(shifted, spec, nullptr, nullptr, nullptr);
    CHECK(max_abs_diff(a, b) > 1e-3);
  }
}

TEST_CASE("group(C) equals instance, group(1) equals layer, bitwise") {
  Shape s{2, 8, 4, 4};
  Tensor x = randn(s, 29);
  Tensor gamma = randn({1, 8, 1, 1}, 30);
  Tensor beta = randn({1, 8, 1, 1}, 31);

  Tensor gc = norm_forward(x, {NormKind::Group, 8, 1e-5, true}, &gamma, &beta,
                           nullptr);
  Tensor in = norm_forward(x, {NormKind::Instance, 1, 1e-5, true}, &gamma,
                           &beta, nullptr);
  CHECK(max_abs_diff(gc, in) == 0.0);

  Tensor g1 = norm_forward(x, {NormKind::Group, 1, 1e-5, true}, &gamma, &beta,
                           nullptr);
  Tensor ln = norm_forward(x, {NormKind::Layer, 1, 1e-5, true}, &gamma, &beta,
                           nullptr);
  CHECK(max_abs_diff(g1, ln) == 0.0);
}

TEST_CASE("norm_backward fills the cache consistently") {
  Shape s{2, 4, 3, 3};
  Tensor x = randn(s, 37);
  NormSpec spec{NormKind::Group, 2, 1e-5, true};
  Tensor gamma = randn({1, 4, 1, 1}, 38);
  Tensor beta = randn({1, 4, 1, 1}, 39);
  NormCache cache;
  Tensor y = norm_forward(x, spec, &gamma, &beta, &cache);
  CHECK(cache.normalized.shape() == s);
  CHECK(cache.inv_std.size() == static_cast<std::size_t>(cache.units.num_units));
  // y == gamma * x_hat + beta
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          CHECK(y.at(n, c, h, w) ==
                doctest::Approx(cache.normalized.at(n, c, h, w) *
                                    gamma.at(0, c, 0, 0) +
                                beta.at(0, c, 0, 0))
                    .epsilon(1e-12));
}
