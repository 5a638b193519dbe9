#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "tembed/errors.hpp"
#include "tembed/tape.hpp"

namespace tembed {

struct SolverConfig {
  double rtol = 1e-3;
  double atol = 1e-3;
  // Cap on the automatically estimated first step; 0 means the default
  // 0.1*(t1-t0).
  double initial_step = 0.0;
  int max_steps = 100000;
  double safety = 0.9;
  double min_scale = 0.2;
  double max_scale = 10.0;
};

struct SolveResult {
  std::vector<double> y_final;
  long nfe = 0;
  long steps_accepted = 0;
  long steps_rejected = 0;
  // (t, state) at the requested sample times, in order.
  std::vector<std::pair<double, std::vector<double>>> trajectory;
};

// Step underflow or max_steps hit: the integration cannot proceed at the
// requested tolerance. Carries what was computed so far. CLI exit code 5.
class StiffnessError : public std::runtime_error {
 public:
  StiffnessError(std::string what, SolveResult partial)
      : std::runtime_error(std::move(what)), partial_(std::move(partial)) {}
  const SolveResult& partial() const { return partial_; }

 private:
  SolveResult partial_;
};

// f(t, y, dy): writes the derivative into dy.
using OdeField =
    std::function<void(double, std::span<const double>, std::span<double>)>;

// Adaptive Dormand-Prince 5(4), FSAL. Error per component e_i is scaled by
// atol + rtol*max(|y_i|, |y_new_i|) and accepted when the RMS of the scaled
// errors is <= 1; the next step is h*safety*err^(-1/5) clipped to
// [min_scale, max_scale]. NFE counts every f call, including rejected
// steps and the two startup evaluations of the initial-step estimator:
// nfe == 6*accepted + 6*rejected + 2.
// sample_times must be strictly increasing within (t0, t1]; matching states
// land in result.trajectory.
SolveResult dopri5_solve(const OdeField& f, std::span<const double> y0,
                         double t0, double t1, const SolverConfig& cfg,
                         std::span<const double> sample_times = {});

// Classical fixed-step RK4 composed of tape ops, so gradients flow through
// the unrolled integration (discretize-then-optimize).
using TapeField = std::function<Var(Tape&, Var, double)>;
Var rk4_solve(Tape& tp, const TapeField& f, Var y0, double t0, double t1,
              int n_steps);

}  // namespace tembed
