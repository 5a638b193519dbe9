#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tembed/block.hpp"

namespace tembed {

struct DiagnosticsConfig {
  int probes = 8;
  int t_grid = 32;
  int probe_batch = 4;
  // An order below the double-precision accumulation noise measured on
  // blind fixtures; overridable per run.
  double sensitivity_threshold = 1e-9;
  double grad_threshold = 1e-12;
  std::uint64_t seed = 2024;
};

enum class Verdict { TimeBlind, EdgeOnly, TimeAware };
const char* verdict_name(Verdict v);

struct ProbeStat {
  int probe = 0;
  double max_pair_diff = 0.0;
  double dt_grad = 0.0;
  double embed_grad = 0.0;
};

// One row per probe and t-grid pair, for the flattened CSV.
struct PairDiff {
  int probe = 0;
  double t_lo = 0.0, t_hi = 0.0;
  double diff = 0.0;  // inf-norm of the output difference
};

struct DiagnosticsReport {
  // Max-pairwise inf-norm over the t grid, averaged over probe inputs.
  double sensitivity = 0.0;
  double sensitivity_max = 0.0;
  double dt_grad_norm = 0.0;    // max finite-difference |df/dt|, L2
  double embed_grad_norm = 0.0; // max autodiff embedding-parameter norm
  int channels_per_unit = 1;
  Verdict verdict = Verdict::TimeAware;

  // Edge decomposition, only measured for same_zero padding with k > 1:
  // the valid-padding twin's sensitivity plus the spatial structure of the
  // injection-site response between t=0 and t=1 (before any normalization
  // mixes border values inward). NaN when not applicable.
  double twin_sensitivity = 0.0;
  double injection_interior_residual = 0.0;
  double injection_border_magnitude = 0.0;
  bool edge_checked = false;

  std::vector<ProbeStat> probe_stats;
  std::vector<PairDiff> pairs;
  // Per-position sensitivity (max over t pairs, channels, batch), averaged
  // over probes; row-major map_h x map_w at the output geometry.
  std::vector<double> spatial_map;
  int map_h = 0, map_w = 0;

  double sensitivity_threshold = 0.0;
  double grad_threshold = 0.0;
};

DiagnosticsReport diagnose(const Block& block, const DiagnosticsConfig& cfg);

// Embedding-parameter gradient norm of a fixed seeded probe loss, max over
// probe inputs and t in {0.25, 0.5, 0.75}.
double embed_grad_probe(const Block& block, const DiagnosticsConfig& cfg);

struct ScaleProbeRow {
  double scale = 0.0;
  double embed_grad_norm = 0.0;
};

// Rebuilds the template with its stage conv kernels multiplied by each
// scale and reports the embedding gradient under a fixed probe loss. The
// decay across scales is the observable for the variance-ratio effect.
std::vector<ScaleProbeRow> variance_ratio_probe(const BlockConfig& tmpl,
                                                const std::vector<double>& scales,
                                                const DiagnosticsConfig& cfg);

struct BiasPolicyRow {
  std::string policy;  // "zero_conv/zero_embed" etc.
  double embed_grad_norm = 0.0;
  double embed_at_zero = 0.0;  // |v_0| of the first stage, if it exists
};

// The three bias-policy variants share every weight draw; only bias values
// differ. Reported, not asserted: initialization ordering is noisy.
std::vector<BiasPolicyRow> bias_policy_probe(const BlockConfig& tmpl,
                                             const DiagnosticsConfig& cfg);

}  // namespace tembed
