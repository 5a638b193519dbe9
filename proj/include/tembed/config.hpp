#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tembed/block.hpp"
#include "tembed/diagnostics.hpp"
#include "tembed/ode.hpp"
#include "tembed/tasks.hpp"

namespace tembed {

struct TaskSpec {
  std::string name = "field_regression";  // or "trajectory"
  TeacherKind teacher = TeacherKind::SineGate;
  double kappa = 2.0;                // pulse_reverse gain
  std::vector<double> snapshots;     // trajectory task only
};

void validate_task(const TaskSpec& task);

// Top-level run document. The one `seed` cascades into block / train /
// diagnostics seeds unless those sections set their own explicitly; the
// TEMBED_SEED environment variable replaces the top-level seed before the
// cascade.
struct RunConfig {
  BlockConfig block;
  TaskSpec task;
  TrainConfig train;
  SolverConfig solver;
  DiagnosticsConfig diagnostics;
  std::uint64_t seed = 0;
  std::string out_dir;

  bool block_seed_explicit = false;
  bool train_seed_explicit = false;
  bool diag_seed_explicit = false;
};

// Strict parsing: unknown keys anywhere are a ConfigError naming the full
// key path. Seeds are already resolved (env override + cascade applied).
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

// Reads TEMBED_SEED; malformed values are a ConfigError.
std::optional<std::uint64_t> env_seed_override();

// Fully resolved document (every default filled in). Re-parses to the same
// RunConfig, which is the reproducibility contract for resolved.json.
nlohmann::json resolved_run_config(const RunConfig& cfg);

nlohmann::json diagnostics_report_to_json(const DiagnosticsReport& rep);
DiagnosticsReport diagnostics_report_from_json(const nlohmann::json& j);

nlohmann::json solve_result_to_json(const SolveResult& res);
nlohmann::json train_result_to_json(const TrainResult& res);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace tembed
