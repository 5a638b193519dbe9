#include "tembed/ode.hpp"

#include <algorithm>
#include <cmath>

namespace tembed {

namespace {

// Dormand-Prince 5(4) tableau. b row == a7*, so stage 7 doubles as the
// first stage of the next step (FSAL). e is b - b_hat (5th minus 4th).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

double rms(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Hairer-style automatic initial step: one trial evaluation at an Euler
// probe point. Together with the k1 evaluation this is the fixed +2 in the
// NFE accounting contract.
double initial_step_estimate(const OdeField& f, std::span<const double> y0,
                             double t0, std::span<const double> f0,
                             double rtol, double atol, double span,
                             long& nfe) {
  std::size_t n = y0.size();
  std::vector<double> sc(n), tmp(n), y1(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) sc[i] = atol + rtol * std::abs(y0[i]);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y0[i] / sc[i];
  double d0 = rms(tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = f0[i] / sc[i];
  double d1 = rms(tmp);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * (d0 / d1);
  h0 = std::min(h0, span);

  for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + h0 * f0[i];
  f(t0 + h0, y1, f1);
  ++nfe;
  for (std::size_t i = 0; i < n; ++i) tmp[i] = (f1[i] - f0[i]) / sc[i];
  double d2 = rms(tmp) / h0;

  double h1;
  if (std::max(d1, d2) <= 1e-15) {
    h1 = std::max(1e-6, h0 * 1e-3);
  } else {
    h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
  }
  return std::min({100.0 * h0, h1, span});
}

}  // namespace

SolveResult dopri5_solve(const OdeField& f, std::span<const double> y0,
                         double t0, double t1, const SolverConfig& cfg,
                         std::span<const double> sample_times) {
  if (!(t1 > t0)) throw ConfigError("dopri5 needs t1 > t0");
  if (!(cfg.rtol > 0.0) || !(cfg.atol > 0.0)) {
    throw ConfigError("dopri5 needs positive rtol and atol");
  }
  if (cfg.max_steps <= 0) throw ConfigError("dopri5 needs max_steps > 0");
  for (std::size_t i = 0; i < sample_times.size(); ++i) {
    bool ordered = i == 0 || sample_times[i] > sample_times[i - 1];
    if (!ordered || sample_times[i] <= t0 || sample_times[i] > t1) {
      throw ConfigError(
          "sample times must be strictly increasing within (t0, t1]");
    }
  }

  const std::size_t n = y0.size();
  const double span = t1 - t0;
  SolveResult res;
  res.y_final.assign(y0.begin(), y0.end());
  std::vector<double>& y = res.y_final;

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  std::vector<double> ytmp(n), ynew(n), errv(n);

  double t = t0;
  f(t, y, k1);
  ++res.nfe;
  double h = initial_step_estimate(f, y, t, k1, cfg.rtol, cfg.atol, span,
                                   res.nfe);
  double cap = cfg.initial_step > 0.0 ? cfg.initial_step : 0.1 * span;
  h = std::min(h, cap);

  std::size_t next_sample = 0;

  while (t < t1) {
    if (res.steps_accepted + res.steps_rejected >= cfg.max_steps) {
      throw StiffnessError("dopri5 exceeded max_steps=" +
                               std::to_string(cfg.max_steps) + " at t=" +
                               std::to_string(t),
                           res);
    }
    if (h < 1e-12 * span) {
      throw StiffnessError("dopri5 step underflow at t=" + std::to_string(t),
                           res);
    }
    // Land exactly on the next sample time and on t1.
    bool hit_sample =
        next_sample < sample_times.size() && t + h >= sample_times[next_sample];
    double target = hit_sample ? sample_times[next_sample] : t1;
    bool hit_end = !hit_sample && t + h >= t1;
    if (hit_sample || hit_end) h = target - t;

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    f(t + c2 * h, ytmp, k2);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    f(t + c3 * h, ytmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    f(t + c4 * h, ytmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] =
          y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    f(t + c5 * h, ytmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] +
                            a64 * k4[i] + a65 * k5[i]);
    f(t + h, ytmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] +
                            b5 * k5[i] + b6 * k6[i]);
    f(t + h, ynew, k7);
    res.nfe += 6;

    for (std::size_t i = 0; i < n; ++i) {
      double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                      e6 * k6[i] + e7 * k7[i]);
      double sc =
          cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      errv[i] = e / sc;
    }
    double err = rms(errv);
    if (!std::isfinite(err)) {
      // Treat a blown-up stage as a hard rejection with maximum shrink.
      ++res.steps_rejected;
      h *= cfg.min_scale;
      continue;
    }

    double factor;
    if (err == 0.0) {
      factor = cfg.max_scale;
    } else {
      factor = cfg.safety * std::pow(err, -0.2);
      factor = std::clamp(factor, cfg.min_scale, cfg.max_scale);
    }

    if (err <= 1.0) {
      t = (hit_sample || hit_end) ? target : t + h;
      y = ynew;
      std::swap(k1, k7);  // FSAL
      ++res.steps_accepted;
      if (hit_sample) {
        res.trajectory.emplace_back(t, y);
        ++next_sample;
      }
      h *= factor;
    } else {
      ++res.steps_rejected;
      h *= factor;
    }
  }
  return res;
}

Var rk4_solve(Tape& tp, const TapeField& f, Var y0, double t0, double t1,
              int n_steps) {
  if (n_steps < 1) throw ConfigError("rk4 needs n_steps >= 1");
  if (!(t1 > t0)) throw ConfigError("rk4 needs t1 > t0");
  double h = (t1 - t0) / n_steps;
  Var y = y0;
  for (int s = 0; s < n_steps; ++s) {
    double t = t0 + s * h;
    Var m1 = f(tp, y, t);
    Var m2 = f(tp, add(tp, y, scale(tp, m1, h / 2)), t + h / 2);
    Var m3 = f(tp, add(tp, y, scale(tp, m2, h / 2)), t + h / 2);
    Var m4 = f(tp, add(tp, y, scale(tp, m3, h)), t + h);
    // y += h/6 * (m1 + 2 m2 + 2 m3 + m4)
    Var acc = add(tp, m1, scale(tp, m2, 2.0));
    acc = add(tp, acc, scale(tp, m3, 2.0));
    acc = add(tp, acc, m4);
    y = add(tp, y, scale(tp, acc, h / 6.0));
  }
  return y;
}

}  // namespace tembed
