#pragma once

#include <string>
#include <vector>

#include "tembed/tensor.hpp"

namespace tembed {

enum class NormKind { Batch, Layer, Instance, Group };

const char* norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

// One parameterized mean-std normalization covering BN, LN, IN, and GN.
// Units (the element sets sharing one mean/variance):
//   Batch     -> all (n,h,w) for fixed c
//   Instance  -> all (h,w) for fixed (n,c)
//   Layer     -> all (c,h,w) for fixed n
//   Group(G)  -> all (c in group, h, w) for fixed (n, group)
// Batch statistics only (training mode); variance is population variance.
struct NormSpec {
  NormKind kind = NormKind::Group;
  int groups = 1;  // meaningful for Group only
  double eps = 1e-5;
  bool affine = true;
};

void validate_norm(const NormSpec& spec, int channels);

// 1 for Batch/Instance, C for Layer, C/G for Group. This is the quantity
// that decides whether a per-channel offset survives the normalization.
int channels_per_unit(const NormSpec& spec, int channels);

// Assigns every (n, c) pair to its unit; h/w never split units.
struct UnitMap {
  int num_units = 0;
  std::size_t unit_size = 0;  // element count per unit, all units equal
  int batch = 0, channels = 0;
  NormKind kind = NormKind::Instance;
  int groups = 1;

  int unit_of(int n, int c) const;
};

UnitMap make_unit_map(Shape s, const NormSpec& spec);

// Saved forward intermediates consumed by norm_backward.
struct NormCache {
  Tensor normalized;            // x_hat, before affine
  std::vector<double> inv_std;  // per unit
  UnitMap units;
};

// gamma/beta are (1,C,1,1) or null; both-or-neither.
Tensor norm_forward(const Tensor& x, const NormSpec& spec, const Tensor* gamma,
                    const Tensor* beta, NormCache* cache);

// Accumulates into non-null outputs (pre-zeroed by the caller).
void norm_backward(const NormCache& cache, const Tensor* gamma,
                   const Tensor& gout, Tensor* gx, Tensor* ggamma,
                   Tensor* gbeta);

}  // namespace tembed
