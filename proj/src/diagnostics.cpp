#include "tembed/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tembed {

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::TimeBlind: return "TimeBlind";
    case Verdict::EdgeOnly: return "EdgeOnly";
    case Verdict::TimeAware: return "TimeAware";
  }
  throw ConfigError("unknown verdict");
}

namespace {

constexpr double kDtTimes[3] = {0.25, 0.5, 0.75};
constexpr double kDtStep = 1e-4;

void check_cfg(const DiagnosticsConfig& cfg) {
  if (cfg.probes < 1) throw ConfigError("diagnostics: probes must be >= 1");
  if (cfg.t_grid < 2) throw ConfigError("diagnostics: t_grid must be >= 2");
  if (cfg.probe_batch < 1)
    throw ConfigError("diagnostics: probe_batch must be >= 1");
  if (!(cfg.sensitivity_threshold > 0.0) || !(cfg.grad_threshold > 0.0))
    throw ConfigError("diagnostics: thresholds must be positive");
}

std::vector<Tensor> make_probes(const Block& block,
                                const DiagnosticsConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork("probes");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(cfg.probes));
  for (int i = 0; i < cfg.probes; ++i) {
    Tensor x(block.input_shape(cfg.probe_batch));
    rng.fill_normal(x);
    out.push_back(std::move(x));
  }
  return out;
}

Tensor make_loss_weights(const Block& block, const DiagnosticsConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork("loss_weights");
  Tensor w(block.output_shape(cfg.probe_batch));
  rng.fill_normal(w);
  return w;
}

struct SensitivityResult {
  std::vector<double> per_probe;  // max pairwise inf-norm over the t grid
  std::vector<PairDiff> pairs;
  std::vector<double> map;  // mean over probes of per-position t range
  int map_h = 0, map_w = 0;
};

SensitivityResult sensitivity_scan(const Block& block,
                                   const std::vector<Tensor>& probes,
                                   int t_grid, bool want_rows) {
  SensitivityResult res;
  Shape out_shape = block.output_shape(static_cast<int>(probes[0].shape().n));
  res.map_h = out_shape.h;
  res.map_w = out_shape.w;
  res.map.assign(static_cast<std::size_t>(out_shape.h) * out_shape.w, 0.0);

  std::vector<double> ts(static_cast<std::size_t>(t_grid));
  for (int i = 0; i < t_grid; ++i)
    ts[static_cast<std::size_t>(i)] = static_cast<double>(i) / (t_grid - 1);

  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::vector<Tensor> outs;
    outs.reserve(ts.size());
    for (double t : ts) outs.push_back(block.eval(probes[p], t));

    double probe_max = 0.0;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      for (std::size_t j = i + 1; j < outs.size(); ++j) {
        double d = max_abs_diff(outs[i], outs[j]);
        probe_max = std::max(probe_max, d);
        if (want_rows)
          res.pairs.push_back(
              {static_cast<int>(p), ts[i], ts[j], d});
      }
    }
    res.per_probe.push_back(probe_max);

    // Per-position range over t, maxed over batch and channels. The max
    // pairwise difference at a position equals its max-min range.
    Tensor mn = outs[0], mx = outs[0];
    for (std::size_t i = 1; i < outs.size(); ++i) {
      for (std::size_t k = 0; k < mn.size(); ++k) {
        mn[k] = std::min(mn[k], outs[i][k]);
        mx[k] = std::max(mx[k], outs[i][k]);
      }
    }
    for (int h = 0; h < out_shape.h; ++h) {
      for (int w = 0; w < out_shape.w; ++w) {
        double pos = 0.0;
        for (int n = 0; n < out_shape.n; ++n)
          for (int c = 0; c < out_shape.c; ++c)
            pos = std::max(pos, mx.at(n, c, h, w) - mn.at(n, c, h, w));
        res.map[static_cast<std::size_t>(h) * out_shape.w + w] +=
            pos / static_cast<double>(probes.size());
      }
    }
  }
  return res;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

double dt_grad_probe_one(const Block& block, const Tensor& x) {
  double best = 0.0;
  for (double t : kDtTimes) {
    Tensor hi = block.eval(x, t + kDtStep);
    Tensor lo = block.eval(x, t - kDtStep);
    axpy_inplace(hi, -1.0, lo);
    scale_inplace(hi, 1.0 / (2.0 * kDtStep));
    best = std::max(best, l2_norm(hi));
  }
  return best;
}

double embed_grad_one(const Block& block, const Tensor& x, const Tensor& w,
                      double t) {
  Tape tp;
  Block::Bound bound = block.bind(tp, true);
  Var out = block.forward(tp, bound, tp.leaf(x), t);
  Var loss = weighted_sum(tp, out, w);
  tp.backward(loss);
  return block.grad_group_norms(tp, bound).embed_total();
}

double embed_grad_probe_impl(const Block& block,
                             const std::vector<Tensor>& probes,
                             const Tensor& w) {
  double best = 0.0;
  for (const Tensor& x : probes)
    for (double t : kDtTimes)
      best = std::max(best, embed_grad_one(block, x, w, t));
  return best;
}

struct InjectionStats {
  double interior_residual = 0.0;
  double border_magnitude = 0.0;
};

// Difference of the first-stage injection site between t=1 and t=0. For an
// edge artifact, the interior (full conv windows) moves by one constant per
// channel while the padded border deviates from it.
InjectionStats injection_scan(const Block& block,
                              const std::vector<Tensor>& probes, int pad) {
  InjectionStats st;
  for (const Tensor& x : probes) {
    Tensor d;
    {
      Tape tp;
      Block::Bound bound = block.bind(tp, false);
      Var site{};
      block.forward(tp, bound, tp.leaf(x), 1.0, &site);
      d = tp.value(site);
    }
    {
      Tape tp;
      Block::Bound bound = block.bind(tp, false);
      Var site{};
      block.forward(tp, bound, tp.leaf(x), 0.0, &site);
      axpy_inplace(d, -1.0, tp.value(site));
    }
    const Shape s = d.shape();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        double mean = 0.0;
        int count = 0;
        for (int h = pad; h < s.h - pad; ++h)
          for (int w = pad; w < s.w - pad; ++w) {
            mean += d.at(n, c, h, w);
            ++count;
          }
        mean /= static_cast<double>(count);
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            bool interior = h >= pad && h < s.h - pad && w >= pad &&
                            w < s.w - pad;
            double dev = std::abs(d.at(n, c, h, w) - mean);
            if (interior)
              st.interior_residual = std::max(st.interior_residual, dev);
            else
              st.border_magnitude = std::max(st.border_magnitude, dev);
          }
      }
    }
  }
  return st;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double embed_grad_probe(const Block& block, const DiagnosticsConfig& cfg) {
  check_cfg(cfg);
  return embed_grad_probe_impl(block, make_probes(block, cfg),
                               make_loss_weights(block, cfg));
}

DiagnosticsReport diagnose(const Block& block, const DiagnosticsConfig& cfg) {
  check_cfg(cfg);
  const BlockConfig& bc = block.config();

  DiagnosticsReport rep;
  rep.sensitivity_threshold = cfg.sensitivity_threshold;
  rep.grad_threshold = cfg.grad_threshold;
  rep.channels_per_unit = channels_per_unit(bc.norm, bc.channels);

  std::vector<Tensor> probes = make_probes(block, cfg);
  Tensor weights = make_loss_weights(block, cfg);

  SensitivityResult sens = sensitivity_scan(block, probes, cfg.t_grid, true);
  rep.pairs = std::move(sens.pairs);
  rep.spatial_map = std::move(sens.map);
  rep.map_h = sens.map_h;
  rep.map_w = sens.map_w;
  rep.sensitivity = mean_of(sens.per_probe);
  rep.sensitivity_max =
      *std::max_element(sens.per_probe.begin(), sens.per_probe.end());

  for (std::size_t p = 0; p < probes.size(); ++p) {
    ProbeStat ps;
    ps.probe = static_cast<int>(p);
    ps.max_pair_diff = sens.per_probe[p];
    ps.dt_grad = dt_grad_probe_one(block, probes[p]);
    double eg = 0.0;
    for (double t : kDtTimes)
      eg = std::max(eg, embed_grad_one(block, probes[p], weights, t));
    ps.embed_grad = eg;
    rep.probe_stats.push_back(ps);
    rep.dt_grad_norm = std::max(rep.dt_grad_norm, ps.dt_grad);
    rep.embed_grad_norm = std::max(rep.embed_grad_norm, ps.embed_grad);
  }

  // Edge decomposition: compare against a valid-padding twin built from the
  // same seed, and inspect the spatial structure of the injection response.
  int pad = (bc.kernel - 1) / 2;
  bool twin_feasible =
      bc.height - 2 * (bc.kernel - 1) >= 1 && bc.width - 2 * (bc.kernel - 1) >= 1;
  bool has_interior =
      bc.height - 2 * pad >= 1 && bc.width - 2 * pad >= 1;
  if (bc.padding == Padding::SameZero && pad > 0 && twin_feasible &&
      has_interior) {
    BlockConfig twin_cfg = bc;
    twin_cfg.padding = Padding::Valid;
    Block twin = Block::build(twin_cfg);
    SensitivityResult twin_sens =
        sensitivity_scan(twin, probes, cfg.t_grid, false);
    rep.twin_sensitivity = mean_of(twin_sens.per_probe);
    InjectionStats inj = injection_scan(block, probes, pad);
    rep.injection_interior_residual = inj.interior_residual;
    rep.injection_border_magnitude = inj.border_magnitude;
    rep.edge_checked = true;
  } else {
    rep.twin_sensitivity = std::numeric_limits<double>::quiet_NaN();
    rep.injection_interior_residual = std::numeric_limits<double>::quiet_NaN();
    rep.injection_border_magnitude = std::numeric_limits<double>::quiet_NaN();
  }

  bool blind = rep.sensitivity < cfg.sensitivity_threshold &&
               rep.embed_grad_norm < cfg.grad_threshold;
  bool edge_only = rep.edge_checked &&
                   rep.twin_sensitivity < cfg.sensitivity_threshold &&
                   rep.injection_interior_residual <
                       cfg.sensitivity_threshold &&
                   rep.injection_border_magnitude > cfg.sensitivity_threshold;
  rep.verdict = blind ? Verdict::TimeBlind
                      : (edge_only ? Verdict::EdgeOnly : Verdict::TimeAware);
  return rep;
}

std::vector<ScaleProbeRow> variance_ratio_probe(
    const BlockConfig& tmpl, const std::vector<double>& scales,
    const DiagnosticsConfig& cfg) {
  check_cfg(cfg);
  if (scales.size() < 3)
    throw ConfigError("variance_ratio_probe: need at least 3 scales");
  for (double s : scales)
    if (!(s > 0.0))
      throw ConfigError("variance_ratio_probe: scales must be positive");

  std::vector<ScaleProbeRow> rows;
  for (double s : scales) {
    Block block = Block::build(tmpl);
    block.scale_conv_kernels(s);
    rows.push_back({s, embed_grad_probe(block, cfg)});
  }
  return rows;
}

std::vector<BiasPolicyRow> bias_policy_probe(const BlockConfig& tmpl,
                                             const DiagnosticsConfig& cfg) {
  check_cfg(cfg);
  const struct {
    const char* name;
    BiasPolicy policy;
  } variants[] = {
      {"conv_zero/embed_zero", {BiasInit::Zero, BiasInit::Zero}},
      {"conv_zero/embed_default", {BiasInit::Zero, BiasInit::Default}},
      {"conv_default/embed_zero", {BiasInit::Default, BiasInit::Zero}},
  };

  std::vector<BiasPolicyRow> rows;
  for (const auto& v : variants) {
    BlockConfig bc = tmpl;
    bc.bias_policy = v.policy;
    Block block = Block::build(bc);
    BiasPolicyRow row;
    row.policy = v.name;
    row.embed_grad_norm = embed_grad_probe(block, cfg);
    row.embed_at_zero = block.has_channel_embedding(0)
                            ? max_abs(block.channel_embedding(0.0, 0))
                            : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tembed
