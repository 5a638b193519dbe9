#include "tembed/block.hpp"

#include <cmath>

namespace tembed {

const char* pipeline_name(Pipeline p) {
  switch (p) {
    case Pipeline::NodeConcatConv:
      return "node_concat_conv";
    case Pipeline::NodeAdditive:
      return "node_additive";
    case Pipeline::DdpmStyle:
      return "ddpm_style";
  }
  return "?";
}

Pipeline pipeline_from_name(const std::string& name) {
  if (name == "node_concat_conv") return Pipeline::NodeConcatConv;
  if (name == "node_additive") return Pipeline::NodeAdditive;
  if (name == "ddpm_style") return Pipeline::DdpmStyle;
  throw ConfigError(
      "unknown pipeline '" + name +
      "' (expected node_concat_conv, node_additive, or ddpm_style)");
}

const char* embed_kind_name(EmbedKind k) {
  return k == EmbedKind::Linear ? "linear" : "sinusoidal_mlp";
}

EmbedKind embed_kind_from_name(const std::string& name) {
  if (name == "linear") return EmbedKind::Linear;
  if (name == "sinusoidal_mlp") return EmbedKind::SinusoidalMlp;
  throw ConfigError("unknown embedding kind '" + name +
                    "' (expected linear or sinusoidal_mlp)");
}

const char* bias_init_name(BiasInit b) {
  return b == BiasInit::Zero ? "zero" : "default";
}

BiasInit bias_init_from_name(const std::string& name) {
  if (name == "zero") return BiasInit::Zero;
  if (name == "default") return BiasInit::Default;
  throw ConfigError("unknown bias init '" + name +
                    "' (expected zero or default)");
}

const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Conv:
      return "conv";
    case ParamGroup::Norm:
      return "norm";
    case ParamGroup::EmbedChannel:
      return "embed_channel";
    case ParamGroup::EmbedPositional:
      return "embed_positional";
  }
  return "?";
}

double GradNorms::embed_total() const {
  return std::sqrt(embed_channel * embed_channel +
                   embed_positional * embed_positional);
}

void validate_block_config(const BlockConfig& cfg) {
  if (cfg.channels < 1) {
    throw ConfigError("block needs channels >= 1, got " +
                      std::to_string(cfg.channels));
  }
  if (cfg.kernel != 1 && cfg.kernel != 3 && cfg.kernel != 5) {
    throw ConfigError("block kernel size must be 1, 3, or 5, got " +
                      std::to_string(cfg.kernel));
  }
  if (cfg.height < 1 || cfg.width < 1) {
    throw ConfigError("block geometry must be at least 1x1, got " +
                      std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width));
  }
  validate_norm(cfg.norm, cfg.channels);
  if (cfg.pipeline == Pipeline::NodeConcatConv) {
    if (cfg.embedding.has_value()) {
      throw ConfigError(
          "node_concat_conv carries the timestep in its kernels and forbids "
          "a separate channel embedding mechanism");
    }
  } else if (!cfg.embedding.has_value()) {
    throw ConfigError(std::string(pipeline_name(cfg.pipeline)) +
                      " requires a channel embedding mechanism");
  }
  if (cfg.weight_scale && *cfg.weight_scale <= 0.0) {
    throw ConfigError("weight_scale must be positive");
  }
  bool uses_mlp = (cfg.embedding && *cfg.embedding == EmbedKind::SinusoidalMlp) ||
                  (cfg.positional && *cfg.positional == EmbedKind::SinusoidalMlp);
  if (uses_mlp) {
    validate_sinusoidal(SinusoidalSpec{cfg.sinusoidal_dim, 10000.0});
  }
  if (cfg.padding == Padding::Valid) {
    int shrink = 2 * (cfg.kernel - 1);
    if (cfg.height <= shrink || cfg.width <= shrink) {
      throw ConfigError("valid padding with kernel " +
                        std::to_string(cfg.kernel) + " needs input above " +
                        std::to_string(shrink) + "x" + std::to_string(shrink) +
                        ", got " + std::to_string(cfg.height) + "x" +
                        std::to_string(cfg.width));
    }
  }
}

namespace {

Tensor draw_uniform(Rng& rng, Shape s, double a) {
  Tensor t(s);
  rng.fill_uniform(t, -a, a);
  return t;
}

// Sum of k*k kernel-law draws per entry: the same law a decomposed
// ConcatConv offset obeys, so linear additive blocks start on an equal
// footing with their concat twins.
Tensor draw_offset(Rng& rng, Shape s, int k, double a) {
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < k * k; ++j) acc += rng.uniform(-a, a);
    t[i] = acc;
  }
  return t;
}

}  // namespace

Block Block::build(const BlockConfig& cfg) {
  validate_block_config(cfg);
  Block b;
  b.cfg_ = cfg;
  b.sinus_ = SinusoidalSpec{cfg.sinusoidal_dim, 10000.0};

  const int C = cfg.channels;
  const int k = cfg.kernel;
  const bool concat = cfg.pipeline == Pipeline::NodeConcatConv;
  const int shrink = cfg.padding == Padding::Valid ? k - 1 : 0;
  const double offset_a = std::sqrt(6.0 / ((C + 1) * k * k));

  Rng rng(cfg.seed);

  auto push = [&](const std::string& name, ParamGroup group, Tensor value,
                  bool concat_kernel = false) {
    b.params_.push_back(
        Parameter{name, group, std::move(value), concat_kernel});
    return static_cast<int>(b.params_.size()) - 1;
  };

  int h = cfg.height, w = cfg.width;
  for (int i = 0; i < 2; ++i) {
    StageIdx st;
    st.in_h = h;
    st.in_w = w;
    st.out_h = h - shrink;
    st.out_w = w - shrink;
    std::string pre = "stage" + std::to_string(i) + ".";

    st.norm_gamma = push(pre + "norm.gamma", ParamGroup::Norm,
                         Tensor::full(Shape{1, C, 1, 1}, 1.0));
    st.norm_beta =
        push(pre + "norm.beta", ParamGroup::Norm, Tensor(Shape{1, C, 1, 1}));

    st.concat = concat;
    int cin = concat ? C + 1 : C;
    int fan_in = cin * k * k;
    double ka = cfg.weight_scale ? *cfg.weight_scale * std::sqrt(3.0)
                                 : std::sqrt(6.0 / fan_in);
    st.kernel = push(pre + "conv.kernel", ParamGroup::Conv,
                     draw_uniform(rng, Shape{C, cin, k, k}, ka), concat);
    Tensor bias = draw_uniform(rng, Shape{1, C, 1, 1},
                               1.0 / std::sqrt(static_cast<double>(fan_in)));
    if (cfg.bias_policy.conv == BiasInit::Zero) bias = Tensor(bias.shape());
    st.bias = push(pre + "conv.bias", ParamGroup::Conv, std::move(bias));

    // Channel embedding: NodeAdditive injects at both stages, DdpmStyle only
    // between its two convolutions.
    bool wants_channel =
        !concat && (cfg.pipeline == Pipeline::NodeAdditive || i == 0);
    bool wants_positional = cfg.positional.has_value() &&
                            (cfg.pipeline != Pipeline::DdpmStyle || i == 0);
    st.hidden = 4 * std::max(C, st.out_h * st.out_w);

    auto draw_branch = [&](const std::string& name, int out_dim) {
      int wi = push(pre + name + ".w", ParamGroup::EmbedChannel,
                    draw_uniform(rng, Shape{out_dim, st.hidden, 1, 1},
                                 std::sqrt(6.0 / st.hidden)));
      Tensor bb = draw_uniform(rng, Shape{1, out_dim, 1, 1},
                               1.0 / std::sqrt(static_cast<double>(st.hidden)));
      if (cfg.bias_policy.embed == BiasInit::Zero) bb = Tensor(bb.shape());
      int bi = push(pre + name + ".b", ParamGroup::EmbedChannel, std::move(bb));
      return std::pair<int, int>{wi, bi};
    };
    auto ensure_trunk = [&](ParamGroup group) {
      if (st.trunk_w >= 0) return;
      int d = cfg.sinusoidal_dim;
      st.trunk_w = push(pre + "embed.trunk.w", group,
                        draw_uniform(rng, Shape{st.hidden, d, 1, 1},
                                     std::sqrt(6.0 / d)));
      Tensor tb = draw_uniform(rng, Shape{1, st.hidden, 1, 1},
                               1.0 / std::sqrt(static_cast<double>(d)));
      if (cfg.bias_policy.embed == BiasInit::Zero) tb = Tensor(tb.shape());
      st.trunk_b = push(pre + "embed.trunk.b", group, std::move(tb));
    };

    if (wants_channel) {
      if (*cfg.embedding == EmbedKind::Linear) {
        st.v = push(pre + "embed.v", ParamGroup::EmbedChannel,
                    draw_offset(rng, Shape{1, C, 1, 1}, k, offset_a));
      } else {
        ensure_trunk(ParamGroup::EmbedChannel);
        auto [wi, bi] = draw_branch("embed.channel", C);
        st.chan_w = wi;
        st.chan_b = bi;
      }
    }
    if (wants_positional) {
      if (*cfg.positional == EmbedKind::Linear) {
        st.p = push(pre + "pos.p", ParamGroup::EmbedPositional,
                    draw_offset(rng, Shape{1, 1, st.out_h, st.out_w}, k,
                                offset_a));
      } else {
        ensure_trunk(st.chan_w >= 0 ? ParamGroup::EmbedChannel
                                    : ParamGroup::EmbedPositional);
        int wi = push(pre + "pos.w", ParamGroup::EmbedPositional,
                      draw_uniform(rng, Shape{st.out_h * st.out_w, st.hidden,
                                              1, 1},
                                   std::sqrt(6.0 / st.hidden)));
        Tensor pb = draw_uniform(rng, Shape{1, st.out_h * st.out_w, 1, 1},
                                 1.0 /
                                     std::sqrt(static_cast<double>(st.hidden)));
        if (cfg.bias_policy.embed == BiasInit::Zero) pb = Tensor(pb.shape());
        int bi = push(pre + "pos.b", ParamGroup::EmbedPositional,
                      std::move(pb));
        st.pos_w = wi;
        st.pos_b = bi;
      }
    }

    b.stage_[i] = st;
    h = st.out_h;
    w = st.out_w;
  }

  if (cfg.pipeline != Pipeline::DdpmStyle) {
    b.final_gamma_ = push("final_norm.gamma", ParamGroup::Norm,
                          Tensor::full(Shape{1, C, 1, 1}, 1.0));
    b.final_beta_ =
        push("final_norm.beta", ParamGroup::Norm, Tensor(Shape{1, C, 1, 1}));
  }
  return b;
}

Block::Bound Block::bind(Tape& tp, bool requires_grad) const {
  Bound bound;
  bound.reserve(params_.size());
  for (const Parameter& p : params_) {
    bound.push_back(tp.leaf(p.value, requires_grad));
  }
  return bound;
}

Shape Block::input_shape(int batch) const {
  return Shape{batch, cfg_.channels, cfg_.height, cfg_.width};
}

Shape Block::output_shape(int batch) const {
  return Shape{batch, cfg_.channels, stage_[1].out_h, stage_[1].out_w};
}

bool Block::preserves_shape() const {
  return stage_[1].out_h == cfg_.height && stage_[1].out_w == cfg_.width;
}

Var Block::forward(Tape& tp, const Bound& bound, Var x, double t,
                   Var* injection_site) const {
  if (bound.size() != params_.size()) {
    throw ConfigError("bound parameter list does not match this block");
  }
  Shape xs = tp.value(x).shape();
  Shape want = input_shape(xs.n);
  if (!(xs == want)) {
    throw ConfigError("block expects input " + want.str() + ", got " +
                      xs.str());
  }
  if (!std::isfinite(t)) {
    throw NumericError("block forward got a non-finite t");
  }

  Var h = x;
  for (int i = 0; i < 2; ++i) {
    const StageIdx& st = stage_[i];
    h = normalize(tp, h, cfg_.norm, bound[st.norm_gamma], bound[st.norm_beta]);
    h = activation(tp, h, cfg_.act);
    if (st.concat) {
      Var plane =
          tp.leaf(Tensor::full(Shape{xs.n, 1, st.in_h, st.in_w}, t), false);
      Var hc = concat_channels(tp, h, plane);
      h = conv2d(tp, hc, bound[st.kernel], bound[st.bias], cfg_.padding);
    } else {
      h = conv2d(tp, h, bound[st.kernel], bound[st.bias], cfg_.padding);
    }

    Var hidden{};
    auto trunk_hidden = [&]() {
      if (!hidden.valid()) {
        Var sf = tp.leaf(sinusoidal_features(t, sinus_), false);
        Var z = conv2d(tp, sf, bound[st.trunk_w], bound[st.trunk_b],
                       Padding::Valid);
        hidden = activation(tp, z, cfg_.act);
      }
      return hidden;
    };
    if (st.v >= 0) {
      h = add_channel_offset(tp, h, scale(tp, bound[st.v], t));
    }
    if (st.chan_w >= 0) {
      Var e = conv2d(tp, trunk_hidden(), bound[st.chan_w], bound[st.chan_b],
                     Padding::Valid);
      h = add_channel_offset(tp, h, e);
    }
    if (st.p >= 0) {
      h = add_spatial_offset(tp, h, scale(tp, bound[st.p], t));
    }
    if (st.pos_w >= 0) {
      Var e = conv2d(tp, trunk_hidden(), bound[st.pos_w], bound[st.pos_b],
                     Padding::Valid);
      e = reshape(tp, e, Shape{1, 1, st.out_h, st.out_w});
      h = add_spatial_offset(tp, h, e);
    }
    if (i == 0 && injection_site) *injection_site = h;
  }

  if (final_gamma_ >= 0) {
    h = normalize(tp, h, cfg_.norm, bound[final_gamma_], bound[final_beta_]);
  }
  if (cfg_.pipeline == Pipeline::DdpmStyle) {
    Var res = x;
    if (!preserves_shape()) {
      res = crop_center(tp, x, stage_[1].out_h, stage_[1].out_w);
    }
    h = add(tp, h, res);
  }
  return h;
}

Tensor Block::eval(const Tensor& x, double t) const {
  Tape tp;
  Bound bound = bind(tp, false);
  Var xv = tp.leaf(x, false);
  return tp.value(forward(tp, bound, xv, t));
}

GradNorms Block::grad_group_norms(const Tape& tp, const Bound& bound) const {
  double sq[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = tp.grad(bound[i]);
    const Parameter& p = params_[i];
    if (p.concat_kernel) {
      Shape s = g.shape();
      int cin = s.c - 1;
      double conv_sq = 0.0, emb_sq = 0.0;
      for (int co = 0; co < s.n; ++co)
        for (int ci = 0; ci < s.c; ++ci)
          for (int kh = 0; kh < s.h; ++kh)
            for (int kw = 0; kw < s.w; ++kw) {
              double gv = g.at(co, ci, kh, kw);
              (ci == cin ? emb_sq : conv_sq) += gv * gv;
            }
      sq[static_cast<int>(ParamGroup::Conv)] += conv_sq;
      sq[static_cast<int>(ParamGroup::EmbedChannel)] += emb_sq;
    } else {
      double acc = 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) acc += g[j] * g[j];
      sq[static_cast<int>(p.group)] += acc;
    }
  }
  GradNorms n;
  n.conv = std::sqrt(sq[static_cast<int>(ParamGroup::Conv)]);
  n.norm = std::sqrt(sq[static_cast<int>(ParamGroup::Norm)]);
  n.embed_channel = std::sqrt(sq[static_cast<int>(ParamGroup::EmbedChannel)]);
  n.embed_positional =
      std::sqrt(sq[static_cast<int>(ParamGroup::EmbedPositional)]);
  return n;
}

EmbedMlp Block::mlp_view(const StageIdx& st) const {
  EmbedMlp m;
  m.trunk = MlpBranch{pval(st.trunk_w), pval(st.trunk_b)};
  if (st.chan_w >= 0)
    m.channel_head = MlpBranch{pval(st.chan_w), pval(st.chan_b)};
  if (st.pos_w >= 0) m.pos_head = MlpBranch{pval(st.pos_w), pval(st.pos_b)};
  m.act = cfg_.act;
  m.out_h = st.out_h;
  m.out_w = st.out_w;
  return m;
}

bool Block::has_channel_embedding(int stage) const {
  const StageIdx& st = stage_[stage];
  return st.v >= 0 || st.chan_w >= 0;
}

bool Block::has_positional_embedding(int stage) const {
  const StageIdx& st = stage_[stage];
  return st.p >= 0 || st.pos_w >= 0;
}

Tensor Block::channel_embedding(double t, int stage) const {
  if (stage < 0 || stage > 1 || !has_channel_embedding(stage)) {
    throw ConfigError("stage " + std::to_string(stage) +
                      " has no channel embedding");
  }
  const StageIdx& st = stage_[stage];
  if (st.v >= 0) {
    Tensor out = pval(st.v);
    scale_inplace(out, t);
    return out;
  }
  return embed_channel(t, mlp_view(st), sinus_);
}

Tensor Block::positional_embedding(double t, int stage) const {
  if (stage < 0 || stage > 1 || !has_positional_embedding(stage)) {
    throw ConfigError("stage " + std::to_string(stage) +
                      " has no positional embedding");
  }
  const StageIdx& st = stage_[stage];
  if (st.p >= 0) return embed_positional_linear(t, pval(st.p));
  return embed_positional_mlp(t, mlp_view(st), sinus_);
}

void Block::scale_conv_kernels(double s) {
  for (int i = 0; i < 2; ++i) {
    Tensor& kern = params_[stage_[i].kernel].value;
    if (stage_[i].concat) {
      Shape ks = kern.shape();
      for (int co = 0; co < ks.n; ++co)
        for (int ci = 0; ci + 1 < ks.c; ++ci)
          for (int kh = 0; kh < ks.h; ++kh)
            for (int kw = 0; kw < ks.w; ++kw) kern.at(co, ci, kh, kw) *= s;
    } else {
      scale_inplace(kern, s);
    }
  }
}

Block Block::to_additive() const {
  if (cfg_.pipeline != Pipeline::NodeConcatConv) {
    throw ConfigError("to_additive requires a node_concat_conv block");
  }
  BlockConfig cfg = cfg_;
  cfg.pipeline = Pipeline::NodeAdditive;
  cfg.embedding = EmbedKind::Linear;
  Block twin = Block::build(cfg);
  for (int i = 0; i < 2; ++i) {
    const StageIdx& src = stage_[i];
    const StageIdx& dst = twin.stage_[i];
    ConcatConvParams cc{pval(src.kernel), std::nullopt, cfg_.padding};
    DecomposedParams dec = decompose_concat_conv(cc);
    twin.params_[dst.kernel].value = dec.reduced_kernel;
    twin.params_[dst.v].value = dec.offset;
    twin.params_[dst.bias].value = pval(src.bias);
    twin.params_[dst.norm_gamma].value = pval(src.norm_gamma);
    twin.params_[dst.norm_beta].value = pval(src.norm_beta);
    if (src.p >= 0 && dst.p >= 0) twin.params_[dst.p].value = pval(src.p);
    if (src.pos_w >= 0 && dst.pos_w >= 0) {
      twin.params_[dst.pos_w].value = pval(src.pos_w);
      twin.params_[dst.pos_b].value = pval(src.pos_b);
      twin.params_[dst.trunk_w].value = pval(src.trunk_w);
      twin.params_[dst.trunk_b].value = pval(src.trunk_b);
    }
  }
  if (final_gamma_ >= 0) {
    twin.params_[twin.final_gamma_].value = pval(final_gamma_);
    twin.params_[twin.final_beta_].value = pval(final_beta_);
  }
  return twin;
}

}  // namespace tembed
