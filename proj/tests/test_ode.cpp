#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "tembed/ode.hpp"
#include "tembed/tape.hpp"

using namespace tembed;

namespace {

const OdeField kExp = [](double, std::span<const double> y,
                         std::span<double> dy) { dy[0] = y[0]; };

// One full revolution of a unit-frequency oscillator over [0, 1].
const OdeField kOscillator = [](double, std::span<const double> y,
                                std::span<double> dy) {
  dy[0] = 2.0 * std::numbers::pi * y[1];
  dy[1] = -2.0 * std::numbers::pi * y[0];
};

}  // namespace

TEST_CASE("dopri5 integrates exp to tolerance") {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;
  double y0[] = {1.0};
  SolveResult r = dopri5_solve(kExp, y0, 0.0, 1.0, cfg);
  CHECK(std::abs(r.y_final[0] - std::numbers::e) < 1e-7);
}

TEST_CASE("dopri5 returns the oscillator to its start") {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;
  double y0[] = {1.0, 0.0};
  SolveResult r = dopri5_solve(kOscillator, y0, 0.0, 1.0, cfg);
  CHECK(std::abs(r.y_final[0] - 1.0) < 1e-6);
  CHECK(std::abs(r.y_final[1]) < 1e-6);
}

TEST_CASE("nfe counts every field call, rejected steps included") {
  for (double tol : {1e-3, 1e-5, 1e-8}) {
    SolverConfig cfg;
    cfg.rtol = cfg.atol = tol;
    double y0[] = {1.0, 0.0};
    SolveResult r = dopri5_solve(kOscillator, y0, 0.0, 1.0, cfg);
    CHECK(r.nfe == 6 * r.steps_accepted + 6 * r.steps_rejected + 2);
    CHECK(r.steps_accepted > 0);
  }
}

TEST_CASE("tightening rtol never increases the exp error") {
  double prev_err = 1e300;
  for (double tol : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9}) {
    SolverConfig cfg;
    cfg.rtol = cfg.atol = tol;
    double y0[] = {1.0};
    SolveResult r = dopri5_solve(kExp, y0, 0.0, 1.0, cfg);
    double err = std::abs(r.y_final[0] - std::numbers::e);
    CHECK(err <= prev_err);
    prev_err = err;
  }
}

TEST_CASE("requested sample times land in the trajectory") {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;
  double y0[] = {1.0};
  std::vector<double> samples{0.25, 0.5, 1.0};
  SolveResult r = dopri5_solve(kExp, y0, 0.0, 1.0, cfg, samples);
  REQUIRE(r.trajectory.size() == 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(r.trajectory[i].first == samples[i]);
    CHECK(std::abs(r.trajectory[i].second[0] - std::exp(samples[i])) < 1e-7);
  }
  CHECK(r.nfe == 6 * r.steps_accepted + 6 * r.steps_rejected + 2);
}

TEST_CASE("solver validates its configuration") {
  SolverConfig cfg;
  cfg.rtol = 0.0;
  double y0[] = {1.0};
  CHECK_THROWS_AS(dopri5_solve(kExp, y0, 0.0, 1.0, cfg), ConfigError);
  cfg.rtol = 1e-3;
  cfg.atol = -1.0;
  CHECK_THROWS_AS(dopri5_solve(kExp, y0, 0.0, 1.0, cfg), ConfigError);
}

TEST_CASE("exhausting max_steps raises stiffness with partial progress") {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-10;
  cfg.max_steps = 5;
  double y0[] = {1.0, 0.0};
  try {
    dopri5_solve(kOscillator, y0, 0.0, 1.0, cfg);
    FAIL("expected StiffnessError");
  } catch (const StiffnessError& e) {
    CHECK(e.partial().steps_accepted <= 5);
    CHECK(e.partial().nfe > 0);
    CHECK(e.partial().y_final.size() == 2);
  }
}

TEST_CASE("initial_step caps the first step estimate") {
  SolverConfig loose;
  loose.rtol = loose.atol = 1e-6;
  SolverConfig capped = loose;
  capped.initial_step = 1e-4;
  double y0[] = {1.0};
  SolveResult a = dopri5_solve(kExp, y0, 0.0, 1.0, loose);
  SolveResult b = dopri5_solve(kExp, y0, 0.0, 1.0, capped);
  // the tiny first step costs at least one extra accepted step
  CHECK(b.steps_accepted >= a.steps_accepted);
  CHECK(std::abs(b.y_final[0] - std::numbers::e) < 1e-5);
}

TEST_CASE("rk4 shows fourth-order convergence on exp") {
  auto run = [](int n_steps) {
    Tape tp;
    Var y0 = tp.leaf(Tensor::full({1, 1, 1, 1}, 1.0), false);
    Var y1 = rk4_solve(
        tp, [](Tape& t, Var y, double) { return scale(t, y, 1.0); }, y0, 0.0,
        1.0, n_steps);
    return std::abs(tp.value(y1)[0] - std::numbers::e);
  };
  double e8 = run(8), e16 = run(16), e32 = run(32);
  CHECK(e8 / e16 > 12.0);
  CHECK(e8 / e16 < 20.0);
  CHECK(e16 / e32 > 12.0);
  CHECK(e16 / e32 < 20.0);
}

TEST_CASE("rk4 handles time-dependent fields") {
  // y' = t*y has y(1) = sqrt(e)
  Tape tp;
  Var y0 = tp.leaf(Tensor::full({1, 1, 1, 1}, 1.0), false);
  Var y1 = rk4_solve(
      tp, [](Tape& t, Var y, double ts) { return scale(t, y, ts); }, y0, 0.0,
      1.0, 64);
  CHECK(std::abs(tp.value(y1)[0] - std::exp(0.5)) < 1e-8);
}

TEST_CASE("gradients flow through the unrolled integrator") {
  // for y' = y, dy(1)/dy(0) = e
  Tape tp;
  Var y0 = tp.leaf(Tensor::full({1, 1, 1, 1}, 1.0), true);
  Var y1 = rk4_solve(
      tp, [](Tape& t, Var y, double) { return scale(t, y, 1.0); }, y0, 0.0,
      1.0, 64);
  tp.backward(sum_scalar(tp, y1));
  CHECK(std::abs(tp.grad(y0)[0] - std::numbers::e) < 1e-6);
}
