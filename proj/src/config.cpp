#include "tembed/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace tembed {

namespace {

using nlohmann::json;

// Strict object reader: every key access is recorded, and done() rejects
// anything unrecognized with its full path, so typos fail loudly instead of
// silently running defaults.
class ObjReader {
 public:
  ObjReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_ + ": expected a JSON object");
  }

  bool has(const char* key) {
    return j_.contains(key) && !j_.at(key).is_null();
  }

  double num(const char* key, double def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number())
      throw ConfigError(where(key) + ": expected a number");
    return v.get<double>();
  }

  int integer(const char* key, int def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer())
      throw ConfigError(where(key) + ": expected an integer");
    return v.get<int>();
  }

  std::uint64_t u64(const char* key, std::uint64_t def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !v.is_number_integer())
      throw ConfigError(where(key) + ": expected a non-negative integer");
    if (v.is_number_integer() && v.get<std::int64_t>() < 0)
      throw ConfigError(where(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const char* key, bool def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected a bool");
    return v.get<bool>();
  }

  std::string str(const char* key, const std::string& def) {
    if (!mark(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> num_list(const char* key) {
    if (!mark(key)) return {};
    const json& v = j_.at(key);
    if (!v.is_array())
      throw ConfigError(where(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
      if (!e.is_number())
        throw ConfigError(where(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const json* child(const char* key) {
    if (!mark(key)) return nullptr;
    return &j_.at(key);
  }

  std::string where(const char* key) const { return path_ + "." + key; }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  bool mark(const char* key) {
    seen_.insert(key);
    return has(key);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto named(const std::string& where, Fn&& fn) {
  // Re-throws name-lookup failures with the config path attached.
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

BlockConfig parse_block(const json& j, const std::string& path,
                        bool* seed_explicit) {
  ObjReader r(j, path);
  BlockConfig cfg;
  cfg.pipeline = named(r.where("pipeline"), [&] {
    return pipeline_from_name(r.str("pipeline", pipeline_name(cfg.pipeline)));
  });
  cfg.channels = r.integer("channels", cfg.channels);
  cfg.kernel = r.integer("kernel", cfg.kernel);
  cfg.height = r.integer("height", cfg.height);
  cfg.width = r.integer("width", cfg.width);
  if (const json* nj = r.child("norm")) {
    ObjReader nr(*nj, path + ".norm");
    cfg.norm.kind = named(nr.where("kind"), [&] {
      return norm_kind_from_name(nr.str("kind", norm_kind_name(cfg.norm.kind)));
    });
    cfg.norm.groups = nr.integer("groups", cfg.norm.groups);
    cfg.norm.eps = nr.num("eps", cfg.norm.eps);
    cfg.norm.affine = nr.boolean("affine", cfg.norm.affine);
    nr.done();
  }
  cfg.act = named(r.where("activation"), [&] {
    return activation_from_name(r.str("activation", activation_name(cfg.act)));
  });
  cfg.padding = named(r.where("padding"), [&] {
    return padding_from_name(r.str("padding", padding_name(cfg.padding)));
  });
  if (r.has("embedding"))
    cfg.embedding = named(r.where("embedding"), [&] {
      return embed_kind_from_name(r.str("embedding", ""));
    });
  else
    r.str("embedding", "");  // marks the key so explicit null passes
  if (r.has("positional"))
    cfg.positional = named(r.where("positional"), [&] {
      return embed_kind_from_name(r.str("positional", ""));
    });
  else
    r.str("positional", "");
  if (const json* bj = r.child("bias_policy")) {
    ObjReader br(*bj, path + ".bias_policy");
    cfg.bias_policy.conv = named(br.where("conv"), [&] {
      return bias_init_from_name(
          br.str("conv", bias_init_name(cfg.bias_policy.conv)));
    });
    cfg.bias_policy.embed = named(br.where("embed"), [&] {
      return bias_init_from_name(
          br.str("embed", bias_init_name(cfg.bias_policy.embed)));
    });
    br.done();
  }
  if (r.has("weight_scale")) cfg.weight_scale = r.num("weight_scale", 0.0);
  else r.num("weight_scale", 0.0);
  cfg.sinusoidal_dim = r.integer("sinusoidal_dim", cfg.sinusoidal_dim);
  if (seed_explicit) *seed_explicit = r.has("seed");
  cfg.seed = r.u64("seed", cfg.seed);
  r.done();
  return cfg;
}

TaskSpec parse_task(const json& j, const std::string& path) {
  ObjReader r(j, path);
  TaskSpec task;
  task.name = r.str("name", task.name);
  task.teacher = named(r.where("teacher"), [&] {
    return teacher_from_name(r.str("teacher", teacher_name(task.teacher)));
  });
  task.kappa = r.num("kappa", task.kappa);
  task.snapshots = r.num_list("snapshots");
  r.done();
  return task;
}

TrainConfig parse_train(const json& j, const std::string& path,
                        bool* seed_explicit) {
  ObjReader r(j, path);
  TrainConfig cfg;
  cfg.optimizer = named(r.where("optimizer"), [&] {
    return optimizer_from_name(r.str("optimizer", optimizer_name(cfg.optimizer)));
  });
  cfg.lr = r.num("lr", cfg.lr);
  cfg.steps = r.integer("steps", cfg.steps);
  cfg.batch = r.integer("batch", cfg.batch);
  if (seed_explicit) *seed_explicit = r.has("seed");
  cfg.seed = r.u64("seed", cfg.seed);
  cfg.log_every = r.integer("log_every", cfg.log_every);
  cfg.momentum = r.num("momentum", cfg.momentum);
  cfg.beta1 = r.num("beta1", cfg.beta1);
  cfg.beta2 = r.num("beta2", cfg.beta2);
  cfg.adam_eps = r.num("adam_eps", cfg.adam_eps);
  cfg.eval_samples = r.integer("eval_samples", cfg.eval_samples);
  cfg.quad_points = r.integer("quad_points", cfg.quad_points);
  cfg.rk4_steps = r.integer("rk4_steps", cfg.rk4_steps);
  cfg.t_groups = r.integer("t_groups", cfg.t_groups);
  r.done();
  return cfg;
}

SolverConfig parse_solver(const json& j, const std::string& path) {
  ObjReader r(j, path);
  SolverConfig cfg;
  cfg.rtol = r.num("rtol", cfg.rtol);
  cfg.atol = r.num("atol", cfg.atol);
  cfg.initial_step = r.num("initial_step", cfg.initial_step);
  cfg.max_steps = r.integer("max_steps", cfg.max_steps);
  cfg.safety = r.num("safety", cfg.safety);
  cfg.min_scale = r.num("min_scale", cfg.min_scale);
  cfg.max_scale = r.num("max_scale", cfg.max_scale);
  r.done();
  return cfg;
}

DiagnosticsConfig parse_diag(const json& j, const std::string& path,
                             bool* seed_explicit) {
  ObjReader r(j, path);
  DiagnosticsConfig cfg;
  cfg.probes = r.integer("probes", cfg.probes);
  cfg.t_grid = r.integer("t_grid", cfg.t_grid);
  cfg.probe_batch = r.integer("probe_batch", cfg.probe_batch);
  cfg.sensitivity_threshold =
      r.num("sensitivity_threshold", cfg.sensitivity_threshold);
  cfg.grad_threshold = r.num("grad_threshold", cfg.grad_threshold);
  if (seed_explicit) *seed_explicit = r.has("seed");
  cfg.seed = r.u64("seed", cfg.seed);
  r.done();
  return cfg;
}

void check_positive(double v, const char* what) {
  if (!(v > 0.0)) throw ConfigError(std::string(what) + " must be positive");
}

void validate_train(const TrainConfig& cfg) {
  check_positive(cfg.lr, "train.lr");
  if (cfg.steps < 1) throw ConfigError("train.steps must be >= 1");
  if (cfg.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (cfg.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must lie in (0, 1)");
  check_positive(cfg.adam_eps, "train.adam_eps");
  if (cfg.eval_samples < 1)
    throw ConfigError("train.eval_samples must be >= 1");
  if (cfg.quad_points < 1) throw ConfigError("train.quad_points must be >= 1");
  if (cfg.rk4_steps < 1) throw ConfigError("train.rk4_steps must be >= 1");
  if (cfg.t_groups < 1) throw ConfigError("train.t_groups must be >= 1");
  if (cfg.batch % std::min(cfg.t_groups, cfg.batch) != 0)
    throw ConfigError("train.batch must be divisible by train.t_groups");
}

void validate_solver(const SolverConfig& cfg) {
  check_positive(cfg.rtol, "solver.rtol");
  check_positive(cfg.atol, "solver.atol");
  if (cfg.initial_step < 0.0)
    throw ConfigError("solver.initial_step must be >= 0");
  if (cfg.max_steps < 1) throw ConfigError("solver.max_steps must be >= 1");
  if (!(cfg.safety > 0.0 && cfg.safety < 1.0))
    throw ConfigError("solver.safety must lie in (0, 1)");
  if (!(cfg.min_scale > 0.0 && cfg.min_scale < 1.0))
    throw ConfigError("solver.min_scale must lie in (0, 1)");
  if (!(cfg.max_scale > 1.0))
    throw ConfigError("solver.max_scale must be > 1");
}

void validate_diag(const DiagnosticsConfig& cfg) {
  if (cfg.probes < 1) throw ConfigError("diagnostics.probes must be >= 1");
  if (cfg.t_grid < 2) throw ConfigError("diagnostics.t_grid must be >= 2");
  if (cfg.probe_batch < 1)
    throw ConfigError("diagnostics.probe_batch must be >= 1");
  check_positive(cfg.sensitivity_threshold,
                 "diagnostics.sensitivity_threshold");
  check_positive(cfg.grad_threshold, "diagnostics.grad_threshold");
}

double get_num_or_null(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return v.get<double>();
}

json num_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

void validate_task(const TaskSpec& task) {
  if (task.name != "field_regression" && task.name != "trajectory")
    throw ConfigError("task.name must be field_regression or trajectory, got '" +
                      task.name + "'");
  check_positive(task.kappa, "task.kappa");
  if (task.name == "trajectory") {
    if (task.teacher != TeacherKind::PulseReverse)
      throw ConfigError("task: trajectory requires teacher pulse_reverse");
    if (task.snapshots.empty())
      throw ConfigError("task.snapshots must be non-empty for trajectory");
    double prev = 0.0;
    for (double s : task.snapshots) {
      if (!(s > prev) || s > 1.0)
        throw ConfigError(
            "task.snapshots must be strictly increasing within (0, 1]");
      prev = s;
    }
  } else if (!task.snapshots.empty()) {
    throw ConfigError("task.snapshots only applies to the trajectory task");
  }
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  ObjReader r(doc, "config");
  RunConfig cfg;
  cfg.seed = r.u64("seed", 0);
  if (auto env = env_seed_override()) cfg.seed = *env;

  if (const json* bj = r.child("block"))
    cfg.block = parse_block(*bj, "config.block", &cfg.block_seed_explicit);
  else
    throw ConfigError("config.block is required");
  if (const json* tj = r.child("task"))
    cfg.task = parse_task(*tj, "config.task");
  if (const json* tj = r.child("train"))
    cfg.train = parse_train(*tj, "config.train", &cfg.train_seed_explicit);
  if (const json* sj = r.child("solver"))
    cfg.solver = parse_solver(*sj, "config.solver");
  if (const json* dj = r.child("diagnostics"))
    cfg.diagnostics =
        parse_diag(*dj, "config.diagnostics", &cfg.diag_seed_explicit);
  cfg.out_dir = r.str("out_dir", "");
  r.done();

  if (!cfg.block_seed_explicit) cfg.block.seed = cfg.seed;
  if (!cfg.train_seed_explicit) cfg.train.seed = cfg.seed;
  if (!cfg.diag_seed_explicit) cfg.diagnostics.seed = cfg.seed;

  validate_block_config(cfg.block);
  validate_task(cfg.task);
  validate_train(cfg.train);
  validate_solver(cfg.solver);
  validate_diag(cfg.diagnostics);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::string text = read_text_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": JSON parse error: " + e.what());
  }
  try {
    return parse_run_config(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::optional<std::uint64_t> env_seed_override() {
  const char* raw = std::getenv("TEMBED_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  std::uint64_t value = 0;
  const char* end = raw + std::char_traits<char>::length(raw);
  auto [ptr, ec] = std::from_chars(raw, end, value);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(std::string("TEMBED_SEED is not a valid seed: '") + raw +
                      "'");
  return value;
}

nlohmann::json resolved_run_config(const RunConfig& cfg) {
  json block{
      {"pipeline", pipeline_name(cfg.block.pipeline)},
      {"channels", cfg.block.channels},
      {"kernel", cfg.block.kernel},
      {"height", cfg.block.height},
      {"width", cfg.block.width},
      {"norm",
       {{"kind", norm_kind_name(cfg.block.norm.kind)},
        {"groups", cfg.block.norm.groups},
        {"eps", cfg.block.norm.eps},
        {"affine", cfg.block.norm.affine}}},
      {"activation", activation_name(cfg.block.act)},
      {"padding", padding_name(cfg.block.padding)},
      {"bias_policy",
       {{"conv", bias_init_name(cfg.block.bias_policy.conv)},
        {"embed", bias_init_name(cfg.block.bias_policy.embed)}}},
      {"sinusoidal_dim", cfg.block.sinusoidal_dim},
      {"seed", cfg.block.seed},
  };
  if (cfg.block.embedding)
    block["embedding"] = embed_kind_name(*cfg.block.embedding);
  if (cfg.block.positional)
    block["positional"] = embed_kind_name(*cfg.block.positional);
  if (cfg.block.weight_scale) block["weight_scale"] = *cfg.block.weight_scale;

  json task{
      {"name", cfg.task.name},
      {"teacher", teacher_name(cfg.task.teacher)},
      {"kappa", cfg.task.kappa},
  };
  if (!cfg.task.snapshots.empty()) task["snapshots"] = cfg.task.snapshots;

  json train{
      {"optimizer", optimizer_name(cfg.train.optimizer)},
      {"lr", cfg.train.lr},
      {"steps", cfg.train.steps},
      {"batch", cfg.train.batch},
      {"seed", cfg.train.seed},
      {"log_every", cfg.train.log_every},
      {"momentum", cfg.train.momentum},
      {"beta1", cfg.train.beta1},
      {"beta2", cfg.train.beta2},
      {"adam_eps", cfg.train.adam_eps},
      {"eval_samples", cfg.train.eval_samples},
      {"quad_points", cfg.train.quad_points},
      {"rk4_steps", cfg.train.rk4_steps},
      {"t_groups", cfg.train.t_groups},
  };

  json solver{
      {"rtol", cfg.solver.rtol},
      {"atol", cfg.solver.atol},
      {"initial_step", cfg.solver.initial_step},
      {"max_steps", cfg.solver.max_steps},
      {"safety", cfg.solver.safety},
      {"min_scale", cfg.solver.min_scale},
      {"max_scale", cfg.solver.max_scale},
  };

  json diag{
      {"probes", cfg.diagnostics.probes},
      {"t_grid", cfg.diagnostics.t_grid},
      {"probe_batch", cfg.diagnostics.probe_batch},
      {"sensitivity_threshold", cfg.diagnostics.sensitivity_threshold},
      {"grad_threshold", cfg.diagnostics.grad_threshold},
      {"seed", cfg.diagnostics.seed},
  };

  json doc{
      {"block", block},   {"task", task},
      {"train", train},   {"solver", solver},
      {"diagnostics", diag}, {"seed", cfg.seed},
  };
  if (!cfg.out_dir.empty()) doc["out_dir"] = cfg.out_dir;
  return doc;
}

nlohmann::json diagnostics_report_to_json(const DiagnosticsReport& rep) {
  json probes = json::array();
  for (const ProbeStat& p : rep.probe_stats)
    probes.push_back({{"probe", p.probe},
                      {"max_pair_diff", p.max_pair_diff},
                      {"dt_grad", p.dt_grad},
                      {"embed_grad", p.embed_grad}});
  json pairs = json::array();
  for (const PairDiff& p : rep.pairs)
    pairs.push_back({{"probe", p.probe},
                     {"t_lo", p.t_lo},
                     {"t_hi", p.t_hi},
                     {"diff", p.diff}});
  return json{
      {"sensitivity", rep.sensitivity},
      {"sensitivity_max", rep.sensitivity_max},
      {"dt_grad_norm", rep.dt_grad_norm},
      {"embed_grad_norm", rep.embed_grad_norm},
      {"channels_per_unit", rep.channels_per_unit},
      {"verdict", verdict_name(rep.verdict)},
      {"edge_checked", rep.edge_checked},
      {"twin_sensitivity", num_or_null(rep.twin_sensitivity)},
      {"injection_interior_residual",
       num_or_null(rep.injection_interior_residual)},
      {"injection_border_magnitude",
       num_or_null(rep.injection_border_magnitude)},
      {"sensitivity_threshold", rep.sensitivity_threshold},
      {"grad_threshold", rep.grad_threshold},
      {"spatial_map",
       {{"h", rep.map_h}, {"w", rep.map_w}, {"values", rep.spatial_map}}},
      {"probe_stats", probes},
      {"pairs", pairs},
  };
}

DiagnosticsReport diagnostics_report_from_json(const nlohmann::json& j) {
  DiagnosticsReport rep;
  rep.sensitivity = j.at("sensitivity").get<double>();
  rep.sensitivity_max = j.at("sensitivity_max").get<double>();
  rep.dt_grad_norm = j.at("dt_grad_norm").get<double>();
  rep.embed_grad_norm = j.at("embed_grad_norm").get<double>();
  rep.channels_per_unit = j.at("channels_per_unit").get<int>();
  std::string verdict = j.at("verdict").get<std::string>();
  if (verdict == "TimeBlind") rep.verdict = Verdict::TimeBlind;
  else if (verdict == "EdgeOnly") rep.verdict = Verdict::EdgeOnly;
  else if (verdict == "TimeAware") rep.verdict = Verdict::TimeAware;
  else throw ConfigError("report: unknown verdict '" + verdict + "'");
  rep.edge_checked = j.at("edge_checked").get<bool>();
  rep.twin_sensitivity = get_num_or_null(j, "twin_sensitivity");
  rep.injection_interior_residual =
      get_num_or_null(j, "injection_interior_residual");
  rep.injection_border_magnitude =
      get_num_or_null(j, "injection_border_magnitude");
  rep.sensitivity_threshold = j.at("sensitivity_threshold").get<double>();
  rep.grad_threshold = j.at("grad_threshold").get<double>();
  const json& map = j.at("spatial_map");
  rep.map_h = map.at("h").get<int>();
  rep.map_w = map.at("w").get<int>();
  rep.spatial_map = map.at("values").get<std::vector<double>>();
  for (const json& p : j.at("probe_stats"))
    rep.probe_stats.push_back({p.at("probe").get<int>(),
                               p.at("max_pair_diff").get<double>(),
                               p.at("dt_grad").get<double>(),
                               p.at("embed_grad").get<double>()});
  for (const json& p : j.at("pairs"))
    rep.pairs.push_back({p.at("probe").get<int>(), p.at("t_lo").get<double>(),
                         p.at("t_hi").get<double>(),
                         p.at("diff").get<double>()});
  return rep;
}

nlohmann::json solve_result_to_json(const SolveResult& res) {
  json traj = json::array();
  for (const auto& [t, y] : res.trajectory)
    traj.push_back({{"t", t}, {"y", y}});
  return json{
      {"y_final", res.y_final},
      {"nfe", res.nfe},
      {"steps_accepted", res.steps_accepted},
      {"steps_rejected", res.steps_rejected},
      {"trajectory", traj},
  };
}

nlohmann::json train_result_to_json(const TrainResult& res) {
  return json{
      {"final_mse", res.final_mse},
      {"floor", num_or_null(res.floor)},
      {"mse_over_floor", num_or_null(res.mse_over_floor)},
      {"last_batch_loss", res.last_batch_loss},
      {"grad_norms",
       {{"conv", res.final_grad_norms.conv},
        {"norm", res.final_grad_norms.norm},
        {"embed_channel", res.final_grad_norms.embed_channel},
        {"embed_positional", res.final_grad_norms.embed_positional},
        {"embed_total", res.final_grad_norms.embed_total()}}},
      {"initial_embed_grad_norm", res.initial_embed_grad_norm},
      {"eval_solve",
       {{"nfe", res.eval_nfe},
        {"accepted", res.eval_accepted},
        {"rejected", res.eval_rejected},
        {"stiff", res.eval_stiff}}},
      {"wall_seconds", res.wall_seconds},
  };
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << text;
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace tembed
