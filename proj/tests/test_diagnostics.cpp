#include <doctest.h>

#include <cmath>
#include <string>

#include "tembed/diagnostics.hpp"
#include "tembed/tasks.hpp"
#include "tembed/tensor.hpp"

using namespace tembed;

namespace {

BlockConfig fixture(Pipeline pipe, NormKind norm, Padding padding,
                    bool positional) {
  BlockConfig cfg;
  cfg.pipeline = pipe;
  cfg.channels = 8;
  cfg.kernel = 3;
  cfg.height = 8;
  cfg.width = 8;
  cfg.norm = {norm, 1, 1e-5, true};
  cfg.act = ActivationKind::SiLU;
  cfg.padding = padding;
  if (pipe != Pipeline::NodeConcatConv) cfg.embedding = EmbedKind::SinusoidalMlp;
  if (positional) cfg.positional = EmbedKind::SinusoidalMlp;
  cfg.seed = 12;
  return cfg;
}

DiagnosticsConfig quick_cfg() {
  DiagnosticsConfig cfg;
  cfg.probes = 4;
  cfg.t_grid = 9;
  cfg.probe_batch = 2;
  return cfg;
}

}  // namespace

TEST_CASE("instance norm with valid padding earns a time-blind verdict") {
  Block block =
      Block::build(fixture(Pipeline::NodeAdditive, NormKind::Instance,
                           Padding::Valid, false));
  DiagnosticsReport rep = diagnose(block, quick_cfg());
  CHECK(rep.verdict == Verdict::TimeBlind);
  CHECK(rep.sensitivity < 1e-10);
  CHECK(rep.sensitivity_max < 1e-10);
  CHECK(rep.embed_grad_norm < 1e-12);
  CHECK(rep.dt_grad_norm < 1e-8);
  CHECK(rep.channels_per_unit == 1);
  CHECK(!rep.edge_checked);
  CHECK(std::isnan(rep.twin_sensitivity));
  CHECK(std::string(verdict_name(rep.verdict)) == "TimeBlind");
}

TEST_CASE("group(1) norm flips the verdict to time-aware") {
  Block block = Block::build(
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false));
  DiagnosticsReport rep = diagnose(block, quick_cfg());
  CHECK(rep.verdict == Verdict::TimeAware);
  CHECK(rep.sensitivity > 1e-6);
  CHECK(rep.embed_grad_norm > 1e-6);
  CHECK(rep.channels_per_unit == 8);
}

TEST_CASE("positional branch defeats instance norm") {
  Block block =
      Block::build(fixture(Pipeline::NodeAdditive, NormKind::Instance,
                           Padding::Valid, true));
  DiagnosticsReport rep = diagnose(block, quick_cfg());
  CHECK(rep.verdict == Verdict::TimeAware);
  CHECK(rep.sensitivity > 1e-6);
}

TEST_CASE("zero-padded concat block is flagged edge-only") {
  // the constant-t plane is zero-padded, so only border pixels see a
  // varying time contribution; additive injection has no such leak
  Block block =
      Block::build(fixture(Pipeline::NodeConcatConv, NormKind::Instance,
                           Padding::SameZero, false));
  DiagnosticsReport rep = diagnose(block, quick_cfg());
  CHECK(rep.verdict == Verdict::EdgeOnly);
  CHECK(rep.edge_checked);
  CHECK(rep.sensitivity > 1e-8);
  CHECK(rep.twin_sensitivity < rep.sensitivity_threshold);
  CHECK(rep.injection_border_magnitude > rep.injection_interior_residual);

  // at the injection site the leak is purely a border phenomenon
  CHECK(rep.injection_border_magnitude > 1e-6);
  CHECK(rep.injection_interior_residual < 1e-9);

  // at the output the norms smear it inward, but the border still leads
  REQUIRE(rep.map_h == 8);
  REQUIRE(rep.map_w == 8);
  double border_sum = 0.0, center_sum = 0.0;
  int border_n = 0, center_n = 0;
  for (int h = 0; h < 8; ++h)
    for (int w = 0; w < 8; ++w) {
      double v = rep.spatial_map[static_cast<std::size_t>(h) * 8 + w];
      if (h == 0 || h == 7 || w == 0 || w == 7) {
        border_sum += v;
        ++border_n;
      } else {
        center_sum += v;
        ++center_n;
      }
    }
  CHECK(border_sum / border_n > center_sum / center_n);
}

TEST_CASE("report carries per-probe rows and every t pair") {
  DiagnosticsConfig cfg = quick_cfg();
  Block block = Block::build(
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false));
  DiagnosticsReport rep = diagnose(block, cfg);
  CHECK(rep.probe_stats.size() == 4);
  CHECK(rep.pairs.size() == 4u * (9 * 8 / 2));
  for (const ProbeStat& ps : rep.probe_stats) {
    CHECK(ps.max_pair_diff > 0.0);
    CHECK(ps.embed_grad > 0.0);
  }
  for (const PairDiff& pd : rep.pairs) {
    CHECK(pd.t_lo < pd.t_hi);
    CHECK(pd.diff >= 0.0);
  }
  CHECK(rep.sensitivity_threshold == cfg.sensitivity_threshold);
  CHECK(rep.grad_threshold == cfg.grad_threshold);
}

TEST_CASE("diagnose is deterministic") {
  Block block = Block::build(
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false));
  DiagnosticsReport a = diagnose(block, quick_cfg());
  DiagnosticsReport b = diagnose(block, quick_cfg());
  CHECK(a.sensitivity == b.sensitivity);
  CHECK(a.embed_grad_norm == b.embed_grad_norm);
  CHECK(a.dt_grad_norm == b.dt_grad_norm);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i)
    CHECK(a.pairs[i].diff == b.pairs[i].diff);
}

TEST_CASE("embedding gradients vanish exactly when the norm cancels them") {
  DiagnosticsConfig cfg = quick_cfg();
  Block blind = Block::build(fixture(Pipeline::NodeAdditive,
                                     NormKind::Instance, Padding::Valid,
                                     false));
  CHECK(embed_grad_probe(blind, cfg) < 1e-12);

  Block aware = Block::build(
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false));
  CHECK(embed_grad_probe(aware, cfg) > 1e-6);
}

TEST_CASE("embedding gradient decays as the operand scale grows") {
  BlockConfig tmpl =
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false);
  DiagnosticsConfig cfg = quick_cfg();
  auto rows = variance_ratio_probe(tmpl, {1.0, 10.0, 100.0}, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].scale == 1.0);
  CHECK(rows[0].embed_grad_norm > rows[1].embed_grad_norm);
  CHECK(rows[1].embed_grad_norm > rows[2].embed_grad_norm);
  double ratio = rows[1].embed_grad_norm / rows[0].embed_grad_norm;
  CHECK(ratio > 0.05);
  CHECK(ratio < 0.3);
}

TEST_CASE("time-blind verdict is sound: the field really is autonomous") {
  BlockConfig cfg = fixture(Pipeline::NodeAdditive, NormKind::Instance,
                            Padding::Valid, false);
  cfg.kernel = 1;  // keep the geometry, the block must act as a field
  cfg.height = cfg.width = 4;
  Block block = Block::build(cfg);
  REQUIRE(diagnose(block, quick_cfg()).verdict == Verdict::TimeBlind);

  Tensor y0(block.input_shape(1));
  Rng(55).fill_normal(y0);
  SolverConfig scfg;
  scfg.rtol = scfg.atol = 1e-8;
  SolveResult live = solve_block_field(block, y0, 0.0, 1.0, scfg);

  // frozen twin: evaluate the block at t = 0 regardless of solver time
  OdeField frozen = [&](double, std::span<const double> y,
                        std::span<double> dy) {
    Tensor state(y0.shape());
    for (std::size_t i = 0; i < y.size(); ++i) state[i] = y[i];
    Tensor g = block.eval(state, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) dy[i] = g[i];
  };
  std::vector<double> flat(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) flat[i] = y0[i];
  SolveResult still = dopri5_solve(frozen, flat, 0.0, 1.0, scfg);

  for (std::size_t i = 0; i < live.y_final.size(); ++i)
    CHECK(std::abs(live.y_final[i] - still.y_final[i]) < 1e-8);
}

TEST_CASE("verdicts across the certified norm/padding/positional table") {
  struct NormCase {
    NormKind kind;
    int groups;
  };
  const NormCase norms[] = {{NormKind::Batch, 1},  {NormKind::Instance, 1},
                            {NormKind::Layer, 1},  {NormKind::Group, 1},
                            {NormKind::Group, 2},  {NormKind::Group, 4},
                            {NormKind::Group, 8}};
  DiagnosticsConfig cfg = quick_cfg();
  cfg.probes = 2;

  for (const NormCase& nc : norms) {
    for (Padding padding : {Padding::Valid, Padding::SameZero}) {
      for (bool positional : {false, true}) {
        BlockConfig bc =
            fixture(Pipeline::NodeConcatConv, nc.kind, padding, positional);
        bc.norm.groups = nc.groups;
        Block block = Block::build(bc);

        Verdict want;
        if (positional || channels_per_unit(bc.norm, bc.channels) >= 2)
          want = Verdict::TimeAware;
        else if (padding == Padding::SameZero)
          want = Verdict::EdgeOnly;  // zero-padded t plane leaks at borders
        else
          want = Verdict::TimeBlind;

        CAPTURE(norm_kind_name(nc.kind));
        CAPTURE(nc.groups);
        CAPTURE(padding == Padding::Valid);
        CAPTURE(positional);
        CHECK(diagnose(block, cfg).verdict == want);
      }
    }
  }

  // additive injection has no border leak: zero padding stays fully blind
  BlockConfig ddpm = fixture(Pipeline::DdpmStyle, NormKind::Instance,
                             Padding::SameZero, false);
  CHECK(diagnose(Block::build(ddpm), cfg).verdict == Verdict::TimeBlind);
}

TEST_CASE("bias policy probe reports all three variants") {
  BlockConfig tmpl =
      fixture(Pipeline::NodeAdditive, NormKind::Group, Padding::Valid, false);
  auto rows = bias_policy_probe(tmpl, quick_cfg());
  REQUIRE(rows.size() == 3);
  for (const BiasPolicyRow& r : rows) {
    CHECK(r.embed_grad_norm > 0.0);
    CHECK(std::isfinite(r.embed_at_zero));
  }
  CHECK(rows[0].policy != rows[1].policy);
  CHECK(rows[1].policy != rows[2].policy);
}
