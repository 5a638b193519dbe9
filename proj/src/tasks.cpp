#include "tembed/tasks.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace tembed {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}  // namespace

const char* teacher_name(TeacherKind k) {
  return k == TeacherKind::SineGate ? "sine_gate" : "pulse_reverse";
}

TeacherKind teacher_from_name(const std::string& name) {
  if (name == "sine_gate") return TeacherKind::SineGate;
  if (name == "pulse_reverse") return TeacherKind::PulseReverse;
  throw ConfigError("unknown teacher '" + name +
                    "' (expected sine_gate or pulse_reverse)");
}

const char* optimizer_name(OptKind k) {
  return k == OptKind::Sgd ? "sgd" : "adam";
}

OptKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptKind::Sgd;
  if (name == "adam") return OptKind::Adam;
  throw ConfigError("unknown optimizer '" + name +
                    "' (expected sgd or adam)");
}

Tensor TeacherField::eval(const Tensor& h, double t) const {
  require_shape(h, state_shape(h.shape().n), "teacher state");
  if (kind == TeacherKind::SineGate) {
    Tensor out = conv2d(h, mix, nullptr, Padding::Valid);
    scale_inplace(out, std::sin(2.0 * kPi * t));
    return out;
  }
  Tensor out = h;
  scale_inplace(out, kappa * std::cos(kPi * t));
  return out;
}

Tensor TeacherField::flow(const Tensor& h0, double t) const {
  if (kind != TeacherKind::PulseReverse) {
    throw ConfigError("analytic flow is only available for pulse_reverse");
  }
  require_shape(h0, state_shape(h0.shape().n), "teacher state");
  Tensor out = h0;
  scale_inplace(out, std::exp((kappa / kPi) * std::sin(kPi * t)));
  return out;
}

TeacherField make_teacher(TeacherKind kind, int channels, int height,
                          int width, std::uint64_t seed) {
  if (channels < 1 || height < 1 || width < 1) {
    throw ConfigError("teacher needs positive state dimensions");
  }
  TeacherField tf;
  tf.kind = kind;
  tf.channels = channels;
  tf.height = height;
  tf.width = width;
  if (kind == TeacherKind::SineGate) {
    Rng rng = Rng(seed).fork("teacher_mix");
    Tensor a(Shape{channels, channels, 1, 1});
    rng.fill_normal(a);
    // Scale to spectral norm 1 (power iteration on A^T A) so the dynamics
    // stay tame over [0,1].
    std::vector<double> u(channels), au(channels), atau(channels);
    for (int i = 0; i < channels; ++i) u[i] = rng.normal();
    double sigma = 1.0;
    for (int it = 0; it < 300; ++it) {
      for (int r = 0; r < channels; ++r) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += a.at(r, c, 0, 0) * u[c];
        au[r] = s;
      }
      for (int c = 0; c < channels; ++c) {
        double s = 0.0;
        for (int r = 0; r < channels; ++r) s += a.at(r, c, 0, 0) * au[r];
        atau[c] = s;
      }
      double norm = 0.0;
      for (double x : atau) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (int c = 0; c < channels; ++c) u[c] = atau[c] / norm;
      double aun = 0.0;
      for (double x : au) aun += x * x;
      sigma = std::sqrt(aun);
    }
    if (sigma > 0.0) scale_inplace(a, 1.0 / sigma);
    tf.mix = std::move(a);
  }
  return tf;
}

std::vector<FieldSample> gen_field_dataset(const TeacherField& teacher, int n,
                                           Rng& rng) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  std::vector<FieldSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    FieldSample s;
    s.h = Tensor(teacher.state_shape(1));
    rng.fill_normal(s.h);
    s.t = rng.uniform();
    s.g = teacher.eval(s.h, s.t);
    out.push_back(std::move(s));
  }
  return out;
}

static std::vector<double> midpoint_times(int quad_points) {
  if (quad_points < 2) throw ConfigError("quadrature needs >= 2 points");
  std::vector<double> t(quad_points);
  for (int q = 0; q < quad_points; ++q)
    t[q] = (q + 0.5) / static_cast<double>(quad_points);
  return t;
}

double time_blind_floor(const TeacherField& teacher, const Tensor& states,
                        int quad_points) {
  std::vector<double> times = midpoint_times(quad_points);
  double w = 1.0 / static_cast<double>(quad_points);
  std::vector<Tensor> g;
  g.reserve(times.size());
  Tensor gbar(teacher.eval(states, times[0]).shape());
  for (double t : times) {
    g.push_back(teacher.eval(states, t));
    axpy_inplace(gbar, w, g.back());
  }
  double floor = 0.0;
  for (const Tensor& gq : g) floor += w * mse(gq, gbar);
  return floor;
}

namespace {

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<Parameter>& params)
      : cfg_(cfg) {
    slot1_.reserve(params.size());
    slot2_.reserve(params.size());
    for (const Parameter& p : params) {
      slot1_.emplace_back(p.value.shape());
      slot2_.emplace_back(p.value.shape());
    }
  }

  void step(std::vector<Parameter>& params, const Tape& tp,
            const Block::Bound& bound) {
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& g = tp.grad(bound[i]);
      Tensor& p = params[i].value;
      if (cfg_.optimizer == OptKind::Sgd) {
        Tensor& vel = slot1_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          vel[j] = cfg_.momentum * vel[j] + g[j];
          p[j] -= cfg_.lr * vel[j];
        }
      } else {
        Tensor& m = slot1_[i];
        Tensor& v = slot2_[i];
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
          p[j] -= cfg_.lr * (m[j] / bc1) /
                  (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> slot1_, slot2_;
  long t_ = 0;
};

void check_task_block(const Block& block, const TeacherField& teacher) {
  const BlockConfig& c = block.config();
  if (c.channels != teacher.channels || c.height != teacher.height ||
      c.width != teacher.width) {
    throw ConfigError("block geometry " + block.input_shape(1).str() +
                      " does not match teacher state " +
                      teacher.state_shape(1).str());
  }
  if (!block.preserves_shape()) {
    throw ConfigError(
        "task targets share the input shape; the block must preserve shape "
        "(same_zero padding or kernel size 1)");
  }
}

double field_eval_mse(const Block& block, const TeacherField& teacher,
                      const Tensor& states, int quad_points) {
  double acc = 0.0;
  double w = 1.0 / static_cast<double>(quad_points);
  for (double t : midpoint_times(quad_points)) {
    acc += w * mse(block.eval(states, t), teacher.eval(states, t));
  }
  return acc;
}

Tensor first_sample(const Tensor& batch) {
  Shape s = batch.shape();
  Tensor out(Shape{1, s.c, s.h, s.w});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = batch[i];
  return out;
}

void eval_nfe_into(const Block& block, const Tensor& y0, TrainResult& res) {
  SolverConfig scfg;  // rtol = atol = 1e-3, the reporting convention
  try {
    SolveResult s = solve_block_field(block, y0, 0.0, 1.0, scfg);
    res.eval_nfe = s.nfe;
    res.eval_accepted = s.steps_accepted;
    res.eval_rejected = s.steps_rejected;
  } catch (const StiffnessError& e) {
    res.eval_stiff = true;
    res.eval_nfe = e.partial().nfe;
    res.eval_accepted = e.partial().steps_accepted;
    res.eval_rejected = e.partial().steps_rejected;
  }
}

}  // namespace

TrainResult train_field_regression(Block& block, const TeacherField& teacher,
                                   const TrainConfig& cfg) {
  check_task_block(block, teacher);
  if (cfg.steps < 1 || cfg.batch < 1) {
    throw ConfigError("training needs steps >= 1 and batch >= 1");
  }
  auto start = std::chrono::steady_clock::now();

  Rng base(cfg.seed);
  Rng batch_rng = base.fork("batches");
  Rng eval_rng = base.fork("eval_states");
  Tensor eval_states(teacher.state_shape(cfg.eval_samples));
  eval_rng.fill_normal(eval_states);

  TrainResult res;
  res.floor = time_blind_floor(teacher, eval_states, cfg.quad_points);

  // Each step spreads its batch over several timesteps: a single shared t
  // makes the model chase the current slice and forget the rest (batch
  // losses drop while the t-averaged error stays at the floor).
  int groups = std::min(cfg.t_groups, cfg.batch);
  if (cfg.batch % groups != 0) {
    throw ConfigError("train.batch must be divisible by train.t_groups");
  }
  int sub = cfg.batch / groups;

  Optimizer opt(cfg, block.params());
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape tp;
    Block::Bound bound;
    double loss_val;
    // bind() is inside the translation: a non-finite parameter produced by
    // the previous update surfaces as a leaf check, not a tape op.
    try {
      bound = block.bind(tp, true);
      Var loss{};
      for (int g = 0; g < groups; ++g) {
        double t = batch_rng.uniform();
        Tensor x(teacher.state_shape(sub));
        batch_rng.fill_normal(x);
        Tensor target = teacher.eval(x, t);
        Var out = block.forward(tp, bound, tp.leaf(x, false), t);
        Var part = scale(tp, mse_loss(tp, out, std::move(target)),
                         1.0 / static_cast<double>(groups));
        loss = g == 0 ? part : add(tp, loss, part);
      }
      loss_val = tp.value(loss)[0];
      tp.backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError(
          step, "loss became non-finite at step " + std::to_string(step) +
                    ": " + e.what());
    }

    GradNorms gn;
    bool want_norms = step == 1 || step % cfg.log_every == 0 ||
                      step == cfg.steps;
    if (want_norms) {
      gn = block.grad_group_norms(tp, bound);
      double rat = res.floor > 0.0 ? loss_val / res.floor : kNan;
      res.log.push_back(
          {step, loss_val, rat, gn.embed_total(), elapsed_s(start)});
    }
    if (step == 1) res.initial_embed_grad_norm = gn.embed_total();
    if (step == cfg.steps) res.final_grad_norms = gn;
    opt.step(block.params(), tp, bound);
    res.last_batch_loss = loss_val;
  }

  res.final_mse = field_eval_mse(block, teacher, eval_states,
                                 cfg.quad_points);
  res.mse_over_floor = res.floor > 0.0 ? res.final_mse / res.floor : kNan;
  eval_nfe_into(block, first_sample(eval_states), res);
  res.wall_seconds = elapsed_s(start);
  return res;
}

TrainResult train_trajectory(Block& block, const TeacherField& teacher,
                             const std::vector<double>& snapshots,
                             const TrainConfig& cfg) {
  check_task_block(block, teacher);
  if (teacher.kind != TeacherKind::PulseReverse) {
    throw ConfigError(
        "the trajectory task needs a teacher with an analytic flow "
        "(pulse_reverse)");
  }
  if (snapshots.empty()) throw ConfigError("trajectory needs >= 1 snapshot");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    bool ordered = i == 0 || snapshots[i] > snapshots[i - 1];
    if (!ordered || snapshots[i] <= 0.0 || snapshots[i] > 1.0) {
      throw ConfigError(
          "snapshots must be strictly increasing within (0, 1]");
    }
  }
  if (cfg.steps < 1 || cfg.batch < 1) {
    throw ConfigError("training needs steps >= 1 and batch >= 1");
  }
  auto start = std::chrono::steady_clock::now();

  // Split the rk4 budget across segments in proportion to their length.
  std::vector<int> seg_steps(snapshots.size());
  double t_total = snapshots.back();
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    double lo = i == 0 ? 0.0 : snapshots[i - 1];
    double len = snapshots[i] - lo;
    seg_steps[i] = std::max(
        1, static_cast<int>(std::lround(cfg.rk4_steps * len / t_total)));
  }

  Rng base(cfg.seed);
  Rng batch_rng = base.fork("batches");
  Rng eval_rng = base.fork("eval_states");
  Tensor eval_states(teacher.state_shape(cfg.eval_samples));
  eval_rng.fill_normal(eval_states);

  TrainResult res;
  res.floor = kNan;

  double inv_snaps = 1.0 / static_cast<double>(snapshots.size());
  auto unroll = [&](Tape& tp, const Block::Bound& bound, const Tensor& x)
      -> Var {
    TapeField field = [&](Tape& t, Var y, double tt) {
      return block.forward(t, bound, y, tt);
    };
    Var y = tp.leaf(x, false);
    Var loss{};
    double tprev = 0.0;
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
      y = rk4_solve(tp, field, y, tprev, snapshots[i], seg_steps[i]);
      Var li = mse_loss(tp, y, teacher.flow(x, snapshots[i]));
      loss = loss.valid() ? add(tp, loss, li) : li;
      tprev = snapshots[i];
    }
    return scale(tp, loss, inv_snaps);
  };

  Optimizer opt(cfg, block.params());
  for (int step = 1; step <= cfg.steps; ++step) {
    Tensor x(teacher.state_shape(cfg.batch));
    batch_rng.fill_normal(x);

    Tape tp;
    Block::Bound bound;
    double loss_val;
    try {
      bound = block.bind(tp, true);
      Var loss = unroll(tp, bound, x);
      loss_val = tp.value(loss)[0];
      tp.backward(loss);
    } catch (const NumericError& e) {
      throw DivergenceError(
          step, "loss became non-finite at step " + std::to_string(step) +
                    ": " + e.what());
    }

    GradNorms gn;
    bool want_norms = step == 1 || step % cfg.log_every == 0 ||
                      step == cfg.steps;
    if (want_norms) {
      gn = block.grad_group_norms(tp, bound);
      res.log.push_back({step, loss_val, kNan, gn.embed_total(),
                         elapsed_s(start)});
    }
    if (step == 1) res.initial_embed_grad_norm = gn.embed_total();
    if (step == cfg.steps) res.final_grad_norms = gn;
    opt.step(block.params(), tp, bound);
    res.last_batch_loss = loss_val;
  }

  {
    Tape tp;
    Block::Bound bound = block.bind(tp, false);
    Var loss = unroll(tp, bound, eval_states);
    res.final_mse = tp.value(loss)[0];
    res.mse_over_floor = kNan;
  }
  eval_nfe_into(block, first_sample(eval_states), res);
  res.wall_seconds = elapsed_s(start);
  return res;
}

SolveResult solve_block_field(const Block& block, const Tensor& y0, double t0,
                              double t1, const SolverConfig& scfg,
                              std::span<const double> sample_times) {
  if (!block.preserves_shape()) {
    throw ConfigError(
        "a block used as an ODE field must preserve shape (same_zero "
        "padding or kernel size 1)");
  }
  Shape s = y0.shape();
  require_shape(y0, block.input_shape(s.n), "ode initial state");
  OdeField f = [&block, s](double t, std::span<const double> y,
                           std::span<double> dy) {
    Tensor x(s);
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i];
    Tensor out = block.eval(x, t);
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = out[i];
  };
  std::vector<double> v(y0.data(), y0.data() + y0.size());
  return dopri5_solve(f, v, t0, t1, scfg, sample_times);
}

}  // namespace tembed
