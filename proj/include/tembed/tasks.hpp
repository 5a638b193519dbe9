#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tembed/block.hpp"
#include "tembed/ode.hpp"
#include "tembed/tensor.hpp"

namespace tembed {

// Analytic vector fields with time dependence built in, so a model that
// cannot see t provably cannot fit them.
//   SineGate:     g(h, t) = sin(2*pi*t) * (A h), A a fixed seeded channel
//                 mixing matrix with spectral norm 1.
//   PulseReverse: g(h, t) = kappa * cos(pi*t) * h. Its flow rises and
//                 returns, h(t) = h0 * exp((kappa/pi) * sin(pi*t)), which no
//                 autonomous field can reproduce through the same states.
enum class TeacherKind { SineGate, PulseReverse };

const char* teacher_name(TeacherKind k);
TeacherKind teacher_from_name(const std::string& name);

struct TeacherField {
  TeacherKind kind = TeacherKind::SineGate;
  int channels = 16;
  int height = 1, width = 1;
  Tensor mix;          // (C, C, 1, 1), SineGate only
  double kappa = 2.0;  // PulseReverse gain

  Shape state_shape(int batch) const {
    return Shape{batch, channels, height, width};
  }
  Tensor eval(const Tensor& h, double t) const;
  // Analytic trajectory state at time t from h0. PulseReverse only.
  Tensor flow(const Tensor& h0, double t) const;
};

TeacherField make_teacher(TeacherKind kind, int channels, int height,
                          int width, std::uint64_t seed);

// The teacher is a task fixture: every entry point builds it from this same
// seed, so runs and sweep points differ only in the model.
inline constexpr std::uint64_t kTeacherSeed = 2718;

struct FieldSample {
  Tensor h;  // (1, C, H, W)
  double t;
  Tensor g;
};

// h entries standard normal, t uniform in [0,1], targets analytic.
std::vector<FieldSample> gen_field_dataset(const TeacherField& teacher, int n,
                                           Rng& rng);

// Minimum MSE achievable by any map that ignores t, over the given states
// with midpoint quadrature on t: mean_j sum_q w_q |g(h_j,t_q) - gbar_j|^2
// with gbar_j the quadrature mean. Any h-only predictor evaluated on the
// same states and quadrature grid is bounded below by this exactly.
double time_blind_floor(const TeacherField& teacher, const Tensor& states,
                        int quad_points);

enum class OptKind { Sgd, Adam };
const char* optimizer_name(OptKind k);
OptKind optimizer_from_name(const std::string& name);

struct TrainConfig {
  OptKind optimizer = OptKind::Adam;
  double lr = 1e-3;
  int steps = 2000;
  int batch = 64;
  std::uint64_t seed = 0;
  int log_every = 50;
  double momentum = 0.9;         // SGD
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int eval_samples = 128;
  int quad_points = 64;
  int rk4_steps = 8;             // total unrolled steps, trajectory task
  // Timesteps sampled per training step; the batch splits evenly across
  // them. One t per step lets the model track the current slice while its
  // t-averaged error never leaves the time-blind floor.
  int t_groups = 8;
};

struct TrainLogRow {
  int step;
  double loss;
  double loss_over_floor;  // nan when no analytic floor exists
  double embed_grad_norm;
  double elapsed_s;
};

struct TrainResult {
  // MSE of the trained block on the frozen evaluation fixture (the same
  // states and t quadrature the floor is computed on).
  double final_mse = 0.0;
  double floor = 0.0;  // nan for the trajectory task
  double mse_over_floor = 0.0;
  double last_batch_loss = 0.0;
  GradNorms final_grad_norms;
  double initial_embed_grad_norm = 0.0;
  // dopri5 on the trained block over [0,1] at rtol=atol=1e-3.
  long eval_nfe = -1;
  long eval_accepted = 0, eval_rejected = 0;
  bool eval_stiff = false;
  double wall_seconds = 0.0;
  std::vector<TrainLogRow> log;
};

// Minimizes |block(h,t) - teacher(h,t)|^2 over fresh standard-normal
// batches, each split across t_groups timestep draws. Throws
// DivergenceError when the loss stops being finite.
TrainResult train_field_regression(Block& block, const TeacherField& teacher,
                                   const TrainConfig& cfg);

// Fits rk4-unrolled block trajectories to the analytic teacher flow at the
// snapshot times. Snapshots must be strictly increasing within (0, 1].
TrainResult train_trajectory(Block& block, const TeacherField& teacher,
                             const std::vector<double>& snapshots,
                             const TrainConfig& cfg);

// Integrates dh/dt = block(h, t) with dopri5; state is one fixture draw.
SolveResult solve_block_field(const Block& block, const Tensor& y0,
                              double t0, double t1, const SolverConfig& scfg,
                              std::span<const double> sample_times = {});

}  // namespace tembed
