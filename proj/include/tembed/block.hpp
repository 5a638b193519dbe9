#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tembed/embed.hpp"
#include "tembed/norm.hpp"
#include "tembed/tape.hpp"

namespace tembed {

// NodeConcatConv: norm-act-ConcatConv-norm-act-ConcatConv-norm
// NodeAdditive:   norm-act-conv-(+v_t [+p_t])-norm-act-conv-(+v_t' [+p_t'])-norm
// DdpmStyle:      norm-act-conv-(+v_t [+p_t])-norm-act-conv, plus residual x
enum class Pipeline { NodeConcatConv, NodeAdditive, DdpmStyle };

enum class EmbedKind { Linear, SinusoidalMlp };
enum class BiasInit { Zero, Default };

const char* pipeline_name(Pipeline p);
Pipeline pipeline_from_name(const std::string& name);
const char* embed_kind_name(EmbedKind k);
EmbedKind embed_kind_from_name(const std::string& name);
const char* bias_init_name(BiasInit b);
BiasInit bias_init_from_name(const std::string& name);

// Applied at construction only. Default means uniform(-1/sqrt(fan_in),
// +1/sqrt(fan_in)). Bias values are always drawn from the stream and then
// zeroed when the policy says Zero, so switching policies never shifts the
// weight draws.
struct BiasPolicy {
  BiasInit conv = BiasInit::Zero;
  BiasInit embed = BiasInit::Default;
};

struct BlockConfig {
  Pipeline pipeline = Pipeline::NodeAdditive;
  int channels = 16;
  int kernel = 1;
  int height = 1, width = 1;  // input geometry; fixes positional map sizes
  NormSpec norm{NormKind::Group, 1, 1e-5, true};
  ActivationKind act = ActivationKind::ReLU;
  Padding padding = Padding::SameZero;
  // Channel mechanism. Required for NodeAdditive and DdpmStyle; must be
  // absent for NodeConcatConv (the kernel itself carries the time path).
  std::optional<EmbedKind> embedding;
  std::optional<EmbedKind> positional;
  BiasPolicy bias_policy;
  // Overrides the kernel-init scale of the two stage convolutions:
  // uniform(-s*sqrt(3), +s*sqrt(3)), empirical std s. Embedding branches
  // keep their default init.
  std::optional<double> weight_scale;
  int sinusoidal_dim = 32;
  std::uint64_t seed = 0;
};

void validate_block_config(const BlockConfig& cfg);

enum class ParamGroup { Conv, Norm, EmbedChannel, EmbedPositional };
const char* param_group_name(ParamGroup g);

struct Parameter {
  std::string name;
  ParamGroup group;
  Tensor value;
  // ConcatConv kernels live in the conv group, but their timestep slice is
  // accounted to embed_channel by the gradient-norm reports.
  bool concat_kernel = false;
};

struct GradNorms {
  double conv = 0.0;
  double norm = 0.0;
  double embed_channel = 0.0;
  double embed_positional = 0.0;
  double embed_total() const;
};

class Block {
 public:
  // Tape handles for every parameter, parallel to params().
  using Bound = std::vector<Var>;

  static Block build(const BlockConfig& cfg);

  const BlockConfig& config() const { return cfg_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }

  Bound bind(Tape& tp, bool requires_grad) const;

  // injection_site, when requested, receives the first-stage activation
  // right after the time terms are injected and before the next
  // normalization touches it.
  Var forward(Tape& tp, const Bound& bound, Var x, double t,
              Var* injection_site = nullptr) const;

  Tensor eval(const Tensor& x, double t) const;

  Shape input_shape(int batch) const;
  Shape output_shape(int batch) const;
  bool preserves_shape() const;

  // L2 gradient norms per parameter group, read from a tape after
  // backward() on a loss built through `bound`.
  GradNorms grad_group_norms(const Tape& tp, const Bound& bound) const;

  // Channel / positional embedding values at time t for one stage (0 or 1);
  // throws when the stage has no such mechanism.
  Tensor channel_embedding(double t, int stage) const;
  Tensor positional_embedding(double t, int stage) const;
  bool has_channel_embedding(int stage) const;
  bool has_positional_embedding(int stage) const;

  // Multiplies the stage conv kernels by s (concat kernels: feature slices
  // only, the timestep slice is part of the embedding mechanism).
  void scale_conv_kernels(double s);

  // The same function re-expressed through the additive pipeline by
  // splitting each ConcatConv kernel into (reduced kernel, offset vector).
  // Exact under valid padding. Requires pipeline == NodeConcatConv.
  Block to_additive() const;

 private:
  struct StageIdx {
    int norm_gamma = -1, norm_beta = -1;
    int kernel = -1, bias = -1;
    bool concat = false;
    int v = -1;
    int trunk_w = -1, trunk_b = -1;
    int chan_w = -1, chan_b = -1;
    int p = -1;
    int pos_w = -1, pos_b = -1;
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    int hidden = 0;
  };

  EmbedMlp mlp_view(const StageIdx& st) const;
  const Tensor& pval(int idx) const { return params_[idx].value; }

  BlockConfig cfg_;
  SinusoidalSpec sinus_;
  StageIdx stage_[2];
  int final_gamma_ = -1, final_beta_ = -1;
  std::vector<Parameter> params_;
};

}  // namespace tembed
