#include <doctest.h>

#include <functional>
#include <vector>

#include "tembed/grad_check.hpp"
#include "tembed/tape.hpp"
#include "tembed/tensor.hpp"

using namespace tembed;

namespace {

Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  Tensor t(s);
  Rng rng(seed);
  rng.fill_normal(t);
  if (scale != 1.0) scale_inplace(t, scale);
  return t;
}

// Checks tape gradients for a scalar-valued graph against central
// differences over every leaf, in one flattened parameter vector.
double tape_vs_fd(const std::vector<Tensor>& leaves,
                  const std::function<Var(Tape&, const std::vector<Var>&)>& graph,
                  double h = 1e-6) {
  std::vector<double> theta;
  for (const Tensor& t : leaves)
    for (std::size_t i = 0; i < t.size(); ++i) theta.push_back(t[i]);

  auto rebuild = [&](std::span<const double> th) {
    Tape tp;
    std::vector<Var> vars;
    std::size_t at = 0;
    for (const Tensor& proto : leaves) {
      Tensor t(proto.shape());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = th[at++];
      vars.push_back(tp.leaf(std::move(t), true));
    }
    return tp.value(graph(tp, vars))[0];
  };

  Tape tp;
  std::vector<Var> vars;
  for (const Tensor& t : leaves) vars.push_back(tp.leaf(t, true));
  Var loss = graph(tp, vars);
  tp.backward(loss);

  std::vector<double> got;
  for (Var v : vars) {
    const Tensor& g = tp.grad(v);
    for (std::size_t i = 0; i < g.size(); ++i) got.push_back(g[i]);
  }
  return max_rel_error(got, finite_diff_grad(rebuild, theta, h));
}

}  // namespace

TEST_CASE("arithmetic op gradients") {
  Shape s{2, 3, 2, 2};
  Tensor a = randn(s, 1), b = randn(s, 2), w = randn(s, 3);

  CHECK(tape_vs_fd({a, b}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, add(tp, v[0], v[1]), w);
        }) < 1e-7);
  CHECK(tape_vs_fd({a, b}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, sub(tp, v[0], v[1]), w);
        }) < 1e-7);
  CHECK(tape_vs_fd({a, b}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, mul(tp, v[0], v[1]), w);
        }) < 1e-7);
  CHECK(tape_vs_fd({a}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, scale(tp, v[0], -1.75), w);
        }) < 1e-7);
}

TEST_CASE("broadcast offset gradients") {
  Shape s{2, 3, 4, 4};
  Tensor x = randn(s, 5), w = randn(s, 6);
  Tensor v = randn({1, 3, 1, 1}, 7);
  Tensor p = randn({1, 1, 4, 4}, 8);

  CHECK(tape_vs_fd({x, v}, [&](Tape& tp, const std::vector<Var>& vars) {
          return weighted_sum(tp, add_channel_offset(tp, vars[0], vars[1]), w);
        }) < 1e-7);
  CHECK(tape_vs_fd({x, p}, [&](Tape& tp, const std::vector<Var>& vars) {
          return weighted_sum(tp, add_spatial_offset(tp, vars[0], vars[1]), w);
        }) < 1e-7);
}

TEST_CASE("activation gradients, all kinds") {
  Shape s{2, 2, 3, 3};
  // Keep |x| >= 0.05 so ReLU/ELU kinks stay away from the finite-difference
  // stencil.
  Tensor x = randn(s, 9);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = x[i] < 0 ? x[i] - 0.1 : x[i] + 0.1;
  Tensor w = randn(s, 10);

  for (ActivationKind k :
       {ActivationKind::ReLU, ActivationKind::SiLU, ActivationKind::Swish,
        ActivationKind::ELU, ActivationKind::Softplus,
        ActivationKind::Sigmoid}) {
    CHECK(tape_vs_fd({x}, [&](Tape& tp, const std::vector<Var>& v) {
            return weighted_sum(tp, activation(tp, v[0], k), w);
          }) < 1e-7);
  }
}

TEST_CASE("conv gradients, both paddings, with bias") {
  Tensor x = randn({2, 3, 5, 5}, 11);
  Tensor k = randn({4, 3, 3, 3}, 12);
  Tensor b = randn({1, 4, 1, 1}, 13);
  for (Padding p : {Padding::Valid, Padding::SameZero}) {
    Shape out = p == Padding::Valid ? Shape{2, 4, 3, 3} : Shape{2, 4, 5, 5};
    Tensor w = randn(out, 14);
    CHECK(tape_vs_fd({x, k, b}, [&](Tape& tp, const std::vector<Var>& v) {
            return weighted_sum(tp, conv2d(tp, v[0], v[1], v[2], p), w);
          }) < 1e-7);
  }
}

TEST_CASE("concat_channels gradients split to both parents") {
  Tensor a = randn({2, 2, 3, 3}, 15);
  Tensor b = randn({2, 3, 3, 3}, 16);
  Tensor w = randn({2, 5, 3, 3}, 17);
  CHECK(tape_vs_fd({a, b}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, concat_channels(tp, v[0], v[1]), w);
        }) < 1e-7);
}

TEST_CASE("normalize gradients, every kind, affine and plain") {
  Shape s{3, 4, 4, 4};
  Tensor x = randn(s, 18);
  Tensor w = randn(s, 19);
  Tensor gamma = randn({1, 4, 1, 1}, 20);
  Tensor beta = randn({1, 4, 1, 1}, 21);

  for (NormSpec spec : {NormSpec{NormKind::Batch, 1, 1e-5, true},
                        NormSpec{NormKind::Instance, 1, 1e-5, true},
                        NormSpec{NormKind::Layer, 1, 1e-5, true},
                        NormSpec{NormKind::Group, 2, 1e-5, true}}) {
    CHECK(tape_vs_fd({x, gamma, beta},
                     [&](Tape& tp, const std::vector<Var>& v) {
                       NormSpec sp = spec;
                       return weighted_sum(
                           tp, normalize(tp, v[0], sp, v[1], v[2]), w);
                     }) < 1e-6);
    NormSpec plain = spec;
    plain.affine = false;
    CHECK(tape_vs_fd({x}, [&](Tape& tp, const std::vector<Var>& v) {
            NormSpec sp = plain;
            return weighted_sum(tp, normalize(tp, v[0], sp), w);
          }) < 1e-6);
  }
}

TEST_CASE("crop and reshape gradients") {
  Tensor x = randn({2, 3, 6, 6}, 22);
  Tensor w = randn({2, 3, 4, 4}, 23);
  CHECK(tape_vs_fd({x}, [&](Tape& tp, const std::vector<Var>& v) {
          return weighted_sum(tp, crop_center(tp, v[0], 4, 4), w);
        }) < 1e-7);

  Tensor w2 = randn({1, 1, 6, 9}, 24);
  CHECK(tape_vs_fd({randn({2, 3, 3, 3}, 25)},
                   [&](Tape& tp, const std::vector<Var>& v) {
                     return weighted_sum(
                         tp, reshape(tp, v[0], {1, 1, 6, 9}), w2);
                   }) < 1e-7);
}

TEST_CASE("scalar reduction gradients") {
  Shape s{2, 2, 3, 3};
  Tensor x = randn(s, 26);
  Tensor target = randn(s, 27);
  CHECK(tape_vs_fd({x}, [&](Tape& tp, const std::vector<Var>& v) {
          return sum_scalar(tp, v[0]);
        }) < 1e-8);
  CHECK(tape_vs_fd({x}, [&](Tape& tp, const std::vector<Var>& v) {
          return mse_loss(tp, v[0], target);
        }) < 1e-7);
}

TEST_CASE("gradients accumulate when a leaf is reused") {
  Tensor x = randn({1, 1, 2, 2}, 28);
  Tape tp;
  Var v = tp.leaf(x, true);
  Var y = add(tp, v, v);
  tp.backward(sum_scalar(tp, y));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(tp.grad(v)[i] == 2.0);
}

TEST_CASE("untracked leaves keep zero gradients") {
  Tape tp;
  Var a = tp.leaf(randn({1, 1, 2, 2}, 29), true);
  Var unused = tp.leaf(randn({1, 1, 2, 2}, 30), true);
  tp.backward(sum_scalar(tp, scale(tp, a, 3.0)));
  CHECK(max_abs(tp.grad(unused)) == 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(tp.grad(a)[i] == 3.0);
}

TEST_CASE("backward demands a scalar and tracked grads") {
  Tape tp;
  Var a = tp.leaf(randn({1, 1, 2, 2}, 31), true);
  CHECK_THROWS_AS(tp.backward(a), ConfigError);  // not a scalar
  Var untracked = tp.leaf(randn({1, 1, 1, 1}, 32), false);
  CHECK_THROWS_AS((void)tp.grad(untracked), ConfigError);
}

TEST_CASE("ops reject non-finite results") {
  Tape tp;
  Tensor big = Tensor::full({1, 1, 1, 1}, 1e308);
  Var a = tp.leaf(big, false);
  Var b = tp.leaf(big, false);
  CHECK_THROWS_AS(mul(tp, a, b), NumericError);  // overflows to inf
}
