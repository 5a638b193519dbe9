#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tembed/config.hpp"
#include "tembed/csv.hpp"
#include "tembed/diagnostics.hpp"
#include "tembed/tasks.hpp"

namespace fs = std::filesystem;

namespace tembed {
namespace {

TeacherField teacher_for(const RunConfig& cfg) {
  TeacherField t = make_teacher(cfg.task.teacher, cfg.block.channels,
                                cfg.block.height, cfg.block.width,
                                kTeacherSeed);
  t.kappa = cfg.task.kappa;
  return t;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text_file(path.string(), j.dump(2) + "\n");
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  write_json(dir / "resolved.json", resolved_run_config(cfg));
}

std::string join_nums(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += num_str(v[i]);
  }
  return out;
}

// --- diagnose -----------------------------------------------------------

int cmd_diagnose(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_run_config(config_path);
  fs::create_directories(out_dir);
  write_resolved(out_dir, cfg);

  Block block = Block::build(cfg.block);
  DiagnosticsReport rep = diagnose(block, cfg.diagnostics);

  write_json(fs::path(out_dir) / "report.json",
             diagnostics_report_to_json(rep));

  Csv csv({"probe", "t_lo", "t_hi", "diff"});
  for (const PairDiff& p : rep.pairs)
    csv.row({num_str(p.probe), num_str(p.t_lo), num_str(p.t_hi),
             num_str(p.diff)});
  write_text_file((fs::path(out_dir) / "report.csv").string(), csv.text());

  std::cout << "verdict=" << verdict_name(rep.verdict)
            << " sensitivity=" << num_str(rep.sensitivity)
            << " embed_grad=" << num_str(rep.embed_grad_norm) << "\n";
  return 0;
}

// --- train ----------------------------------------------------------------

TrainResult run_training(const RunConfig& cfg, Block& block) {
  TeacherField teacher = teacher_for(cfg);
  if (cfg.task.name == "trajectory")
    return train_trajectory(block, teacher, cfg.task.snapshots, cfg.train);
  return train_field_regression(block, teacher, cfg.train);
}

void write_train_outputs(const fs::path& dir, const RunConfig& cfg,
                         const TrainResult& res) {
  write_resolved(dir, cfg);
  Csv csv({"step", "loss", "loss_over_floor", "embed_grad_norm",
           "time_elapsed_s"});
  for (const TrainLogRow& row : res.log)
    csv.row({num_str(row.step), num_str(row.loss),
             num_str(row.loss_over_floor), num_str(row.embed_grad_norm),
             num_str(row.elapsed_s)});
  write_text_file((dir / "metrics.csv").string(), csv.text());
  write_json(dir / "summary.json", train_result_to_json(res));
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = load_run_config(config_path);
  fs::create_directories(out_dir);
  Block block = Block::build(cfg.block);
  TrainResult res = run_training(cfg, block);
  write_train_outputs(out_dir, cfg, res);
  std::cout << "final_mse=" << num_str(res.final_mse)
            << " mse_over_floor=" << num_str(res.mse_over_floor)
            << " nfe=" << res.eval_nfe << "\n";
  return 0;
}

// --- sweep ----------------------------------------------------------------

RunConfig apply_sweep_value(RunConfig cfg, const std::string& param,
                            const std::string& value) {
  auto as_int = [&](const std::string& s) {
    try {
      std::size_t pos = 0;
      int v = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep: '" + s + "' is not an integer");
    }
  };
  auto as_double = [&](const std::string& s) {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep: '" + s + "' is not a number");
    }
  };

  if (param == "groups") {
    cfg.block.norm.kind = NormKind::Group;
    cfg.block.norm.groups = as_int(value);
  } else if (param == "activation") {
    cfg.block.act = activation_from_name(value);
  } else if (param == "weight_scale") {
    cfg.block.weight_scale = as_double(value);
  } else if (param == "bias_policy") {
    // conv:embed, each of {zero, default}
    auto sep = value.find(':');
    if (sep == std::string::npos)
      throw ConfigError("sweep: bias_policy values look like conv:embed, e.g. "
                        "zero:default");
    cfg.block.bias_policy.conv = bias_init_from_name(value.substr(0, sep));
    cfg.block.bias_policy.embed = bias_init_from_name(value.substr(sep + 1));
  } else {
    throw ConfigError("sweep: unknown param '" + param +
                      "' (expected groups|activation|weight_scale|bias_policy)");
  }
  validate_block_config(cfg.block);
  return cfg;
}

struct SweepRun {
  RunConfig cfg;
  std::string value;
  std::uint64_t seed = 0;
  fs::path dir;
  double metric = 0.0;
  double nfe = 0.0;
  std::exception_ptr error;
};

void run_one_sweep_point(SweepRun& run) {
  try {
    fs::create_directories(run.dir);
    Block block = Block::build(run.cfg.block);
    TrainResult res = run_training(run.cfg, block);
    write_train_outputs(run.dir, run.cfg, res);
    run.metric = res.final_mse;
    run.nfe = static_cast<double>(res.eval_nfe);
  } catch (...) {
    run.error = std::current_exception();
  }
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::vector<std::string>& values,
              const std::string& out_dir, int jobs, int seeds) {
  if (values.empty()) throw ConfigError("sweep: --values must be non-empty");
  if (seeds < 1) throw ConfigError("sweep: --seeds must be >= 1");
  if (jobs < 1) throw ConfigError("sweep: --jobs must be >= 1");

  RunConfig base = load_run_config(config_path);
  fs::create_directories(out_dir);
  write_resolved(out_dir, base);

  // Paired seeds: value i and value j share the same seed list, so seed
  // noise cancels out of cross-value comparisons.
  std::vector<SweepRun> runs;
  for (const std::string& value : values) {
    for (int s = 0; s < seeds; ++s) {
      SweepRun run;
      run.cfg = apply_sweep_value(base, param, value);
      run.value = value;
      run.seed = base.seed + static_cast<std::uint64_t>(s);
      run.cfg.seed = run.seed;
      run.cfg.block.seed = run.seed;
      run.cfg.train.seed = run.seed;
      run.cfg.diagnostics.seed = run.seed;
      run.dir = fs::path(out_dir) / "runs" /
                (param + "_" + value) / ("seed_" + std::to_string(s));
      runs.push_back(std::move(run));
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= runs.size()) break;
      run_one_sweep_point(runs[i]);
    }
  };
  int n_threads = std::min<int>(jobs, static_cast<int>(runs.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();

  for (const SweepRun& run : runs)
    if (run.error) std::rethrow_exception(run.error);

  Csv csv({"value", "mean_metric", "std_metric", "mean_nfe", "std_nfe"});
  nlohmann::json detail = nlohmann::json::array();
  for (std::size_t v = 0; v < values.size(); ++v) {
    std::vector<double> metrics, nfes;
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t s = 0; s < static_cast<std::size_t>(seeds); ++s) {
      const SweepRun& run = runs[v * seeds + s];
      metrics.push_back(run.metric);
      nfes.push_back(run.nfe);
      per_seed.push_back({{"seed", run.seed},
                          {"final_mse", run.metric},
                          {"nfe", run.nfe}});
    }
    auto mean = [](const std::vector<double>& xs) {
      double m = 0.0;
      for (double x : xs) m += x;
      return m / static_cast<double>(xs.size());
    };
    auto sample_std = [&](const std::vector<double>& xs, double m) {
      if (xs.size() < 2) return 0.0;
      double ss = 0.0;
      for (double x : xs) ss += (x - m) * (x - m);
      return std::sqrt(ss / static_cast<double>(xs.size() - 1));
    };
    double mm = mean(metrics), sm = sample_std(metrics, mm);
    double mn = mean(nfes), sn = sample_std(nfes, mn);
    csv.row({values[v], num_str(mm), num_str(sm), num_str(mn), num_str(sn)});
    detail.push_back({{"value", values[v]},
                      {"mean_metric", mm},
                      {"std_metric", sm},
                      {"mean_nfe", mn},
                      {"std_nfe", sn},
                      {"runs", per_seed}});
    std::cout << "value=" << values[v] << " mean=" << num_str(mm)
              << " std=" << num_str(sm) << "\n";
  }
  write_text_file((fs::path(out_dir) / "sweep.csv").string(), csv.text());
  write_json(fs::path(out_dir) / "sweep.json",
             nlohmann::json{{"param", param}, {"seeds", seeds},
                            {"values", detail}});
  return 0;
}

// --- solve ----------------------------------------------------------------

int cmd_solve(const std::string& testcase, double rtol, double atol,
              bool tol_given, const std::string& out_dir) {
  fs::create_directories(out_dir);

  OdeField field;
  std::vector<double> y0;
  SolverConfig scfg;

  if (testcase == "exp") {
    field = [](double, std::span<const double> y, std::span<double> dy) {
      dy[0] = y[0];
    };
    y0 = {1.0};
  } else if (testcase == "oscillator") {
    // One full period of du = 2*pi*v, dv = -2*pi*u over [0, 1].
    field = [](double, std::span<const double> y, std::span<double> dy) {
      constexpr double two_pi = 6.283185307179586476925286766559;
      dy[0] = two_pi * y[1];
      dy[1] = -two_pi * y[0];
    };
    y0 = {1.0, 0.0};
  } else if (testcase.rfind("block:", 0) == 0) {
    RunConfig cfg = load_run_config(testcase.substr(6));
    write_resolved(out_dir, cfg);
    scfg = cfg.solver;
    auto block = std::make_shared<Block>(Block::build(cfg.block));
    if (!block->preserves_shape())
      throw ConfigError(
          "solve: the block must preserve its input shape to act as a field");
    Tensor state(block->input_shape(1));
    Rng rng = Rng(cfg.seed).fork("solve_state");
    rng.fill_normal(state);
    y0.assign(state.data(), state.data() + state.size());
    Shape shape = state.shape();
    field = [block, shape](double t, std::span<const double> y,
                           std::span<double> dy) {
      Tensor h(shape);
      std::copy(y.begin(), y.end(), h.data());
      Tensor g = block->eval(h, t);
      std::copy(g.data(), g.data() + g.size(), dy.begin());
    };
  } else {
    throw ConfigError("solve: unknown testcase '" + testcase +
                      "' (expected exp, oscillator, or block:<config-file>)");
  }

  if (tol_given) {
    scfg.rtol = rtol;
    scfg.atol = atol;
  }

  SolveResult res;
  try {
    res = dopri5_solve(field, y0, 0.0, 1.0, scfg);
  } catch (const StiffnessError& e) {
    write_json(fs::path(out_dir) / "solve.json",
               solve_result_to_json(e.partial()));
    std::cerr << "stiffness: " << e.what() << "\n";
    return 5;
  }

  write_json(fs::path(out_dir) / "solve.json", solve_result_to_json(res));
  std::cout << "y_final=" << join_nums(res.y_final) << " nfe=" << res.nfe
            << " accepted=" << res.steps_accepted
            << " rejected=" << res.steps_rejected << "\n";
  return 0;
}

}  // namespace
}  // namespace tembed

int main(int argc, char** argv) {
  using namespace tembed;

  CLI::App app{"Timestep-embedding laboratory: diagnose time-awareness of "
               "normalized conv blocks, train them on time-dependent "
               "teachers, and integrate them as ODE fields"};
  app.require_subcommand(1);

  std::string d_config, d_out = "out";
  CLI::App* d = app.add_subcommand(
      "diagnose", "Run the time-awareness diagnostics on a block config");
  d->add_option("config", d_config, "run config JSON path")->required();
  d->add_option("--out", d_out, "output directory");

  std::string t_config, t_out = "out";
  CLI::App* t = app.add_subcommand("train", "Train a block on its task");
  t->add_option("config", t_config, "run config JSON path")->required();
  t->add_option("--out", t_out, "output directory");

  std::string s_config, s_param, s_out = "out";
  std::vector<std::string> s_values;
  int s_jobs = 1, s_seeds = 3;
  CLI::App* s = app.add_subcommand(
      "sweep", "Train across a parameter grid with paired seeds");
  s->add_option("config", s_config, "run config JSON path")->required();
  s->add_option("--param", s_param,
                "groups|activation|weight_scale|bias_policy")
      ->required();
  s->add_option("--values", s_values, "comma-separated value list")
      ->required()
      ->delimiter(',');
  s->add_option("--out", s_out, "output directory");
  s->add_option("--jobs", s_jobs, "worker pool size");
  s->add_option("--seeds", s_seeds, "seeds per value");

  std::string v_testcase, v_out = "out";
  double v_rtol = 1e-3, v_atol = 1e-3;
  CLI::App* v = app.add_subcommand(
      "solve", "Integrate a testcase field with the adaptive solver");
  v->add_option("--testcase", v_testcase,
                "exp | oscillator | block:<config-file>")
      ->required();
  CLI::Option* rt = v->add_option("--rtol", v_rtol, "relative tolerance");
  CLI::Option* at = v->add_option("--atol", v_atol, "absolute tolerance");
  v->add_option("--out", v_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (d->parsed()) return cmd_diagnose(d_config, d_out);
    if (t->parsed()) return cmd_train(t_config, t_out);
    if (s->parsed())
      return cmd_sweep(s_config, s_param, s_values, s_out, s_jobs, s_seeds);
    if (v->parsed()) {
      if ((rt->count() > 0) != (at->count() > 0))
        throw ConfigError("solve: pass both --rtol and --atol or neither");
      return cmd_solve(v_testcase, v_rtol, v_atol, rt->count() > 0, v_out);
    }
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence at step " << e.step() << ": " << e.what() << "\n";
    return 4;
  } catch (const StiffnessError& e) {
    std::cerr << "stiffness: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
