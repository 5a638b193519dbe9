#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "tembed/activations.hpp"
#include "tembed/conv.hpp"
#include "tembed/norm.hpp"
#include "tembed/tensor.hpp"

namespace tembed {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Built fresh for every forward pass;
// backward() replays the recorded closures in exact reverse order.
// Single-threaded by contract: one forward+backward per tape at a time.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient w.r.t. v accumulated by the last backward(). Slots never on a
  // path to the loss hold exact zeros. v must require grad.
  const Tensor& grad(Var v) const;

  // loss must be a single-element tensor produced on this tape.
  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }

  // --- op-construction interface ---------------------------------------
  // Backward closures receive the tape and the output gradient; they
  // accumulate into parent slots via grad_target(). The closure is dropped
  // when no parent requires grad, so untracked forwards cost no bookkeeping.
  using BackFn = std::function<void(Tape&, const Tensor& gout)>;
  Var push(Tensor value, std::initializer_list<Var> parents, BackFn backfn,
           const char* opname);

  // Accumulation target for a parent slot; null when the slot does not
  // require grad (backward kernels skip the work).
  Tensor* grad_target(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackFn backfn;
    std::array<int, 3> parents{-1, -1, -1};
    int n_parents = 0;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// --- primitive ops ------------------------------------------------------
// Every op validates shapes, checks the result for non-finite values, and
// registers a backward closure when gradients are tracked.

Var add(Tape& tp, Var a, Var b);
Var sub(Tape& tp, Var a, Var b);
Var mul(Tape& tp, Var a, Var b);  // elementwise
Var scale(Tape& tp, Var a, double s);

// x + v with v of shape (1,C,1,1), broadcast over batch and space.
Var add_channel_offset(Tape& tp, Var x, Var v);
// x + p with p of shape (1,1,H,W), broadcast over batch and channels.
Var add_spatial_offset(Tape& tp, Var x, Var p);

Var activation(Tape& tp, Var x, ActivationKind kind);
Var conv2d(Tape& tp, Var x, Var kernel, std::optional<Var> bias,
           Padding padding);
Var concat_channels(Tape& tp, Var x, Var y);
Var normalize(Tape& tp, Var x, const NormSpec& spec,
              std::optional<Var> gamma = std::nullopt,
              std::optional<Var> beta = std::nullopt);

// Center crop to (h, w); used by residual skips when valid padding shrinks
// the spatial extent.
Var crop_center(Tape& tp, Var x, int h, int w);
Var reshape(Tape& tp, Var x, Shape s);

Var sum_scalar(Tape& tp, Var x);                     // (1,1,1,1)
Var mse_loss(Tape& tp, Var pred, Tensor target);     // mean over elements
Var weighted_sum(Tape& tp, Var x, Tensor weights);   // <weights, x>

}  // namespace tembed
