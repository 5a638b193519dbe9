#include "tembed/tape.hpp"

#include <memory>

namespace tembed {

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= size()) {
    throw ConfigError("invalid tape handle");
  }
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  require_finite(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) {
    throw ConfigError("grad() queried on a slot that does not require grad");
  }
  if (!ran_backward_) {
    throw ConfigError("grad() queried before backward()");
  }
  return n.grad;
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, BackFn backfn,
               const char* opname) {
  require_finite(value, opname);
  Node n;
  n.value = std::move(value);
  for (Var p : parents) {
    if (!p.valid()) continue;
    if (p.id >= size()) throw ConfigError("op parent from a different tape");
    if (n.n_parents >= 3) throw ConfigError("op with more than 3 parents");
    n.parents[n.n_parents++] = p.id;
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backfn = std::move(backfn);
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

Tensor* Tape::grad_target(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  return &n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ConfigError("backward() needs a scalar loss, got shape " +
                      ln.value.shape().str());
  }
  // Zero-fill every tracked slot so untouched gradients read as exact zeros.
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.shape());
  }
  ran_backward_ = true;
  if (!ln.requires_grad) return;

  std::vector<char> reachable(nodes_.size(), 0);
  reachable[loss.id] = 1;
  nodes_[loss.id].grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!reachable[i] || !n.requires_grad) continue;
    for (int p = 0; p < n.n_parents; ++p) reachable[n.parents[p]] = 1;
    if (n.backfn) n.backfn(*this, n.grad);
  }
}

// --- ops ------------------------------------------------------------------

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() +
                      " vs " + b.shape().str());
  }
}

Var add(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.value(a);
  const Tensor& bv = tp.value(b);
  check_same(av, bv, "add");
  Tensor out = av;
  add_inplace(out, bv);
  return tp.push(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) add_inplace(*ga, g);
        if (Tensor* gb = t.grad_target(b)) add_inplace(*gb, g);
      },
      "add");
}

Var sub(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.value(a);
  const Tensor& bv = tp.value(b);
  check_same(av, bv, "sub");
  Tensor out = av;
  axpy_inplace(out, -1.0, bv);
  return tp.push(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) add_inplace(*ga, g);
        if (Tensor* gb = t.grad_target(b)) axpy_inplace(*gb, -1.0, g);
      },
      "sub");
}

Var mul(Tape& tp, Var a, Var b) {
  const Tensor& av = tp.value(a);
  const Tensor& bv = tp.value(b);
  check_same(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tp.push(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (Tensor* ga = t.grad_target(a))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        if (Tensor* gb = t.grad_target(b))
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
      },
      "mul");
}

Var scale(Tape& tp, Var a, double s) {
  Tensor out = tp.value(a);
  scale_inplace(out, s);
  return tp.push(
      std::move(out), {a},
      [a, s](Tape& t, const Tensor& g) {
        if (Tensor* ga = t.grad_target(a)) axpy_inplace(*ga, s, g);
      },
      "scale");
}

Var add_channel_offset(Tape& tp, Var x, Var v) {
  const Tensor& xv = tp.value(x);
  const Tensor& vv = tp.value(v);
  Shape s = xv.shape();
  require_shape(vv, Shape{1, s.c, 1, 1}, "channel offset");
  Tensor out = xv;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double d = vv.at(0, c, 0, 0);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) out.at(n, c, h, w) += d;
    }
  return tp.push(
      std::move(out), {x, v},
      [x, v](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) add_inplace(*gx, g);
        if (Tensor* gv = t.grad_target(v)) {
          Shape s = g.shape();
          for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
              double acc = 0.0;
              for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) acc += g.at(n, c, h, w);
              gv->at(0, c, 0, 0) += acc;
            }
        }
      },
      "add_channel_offset");
}

Var add_spatial_offset(Tape& tp, Var x, Var p) {
  const Tensor& xv = tp.value(x);
  const Tensor& pv = tp.value(p);
  Shape s = xv.shape();
  require_shape(pv, Shape{1, 1, s.h, s.w}, "spatial offset");
  Tensor out = xv;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) out.at(n, c, h, w) += pv.at(0, 0, h, w);
  return tp.push(
      std::move(out), {x, p},
      [x, p](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) add_inplace(*gx, g);
        if (Tensor* gp = t.grad_target(p)) {
          Shape s = g.shape();
          for (int h = 0; h < s.h; ++h)
            for (int w = 0; w < s.w; ++w) {
              double acc = 0.0;
              for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) acc += g.at(n, c, h, w);
              gp->at(0, 0, h, w) += acc;
            }
        }
      },
      "add_spatial_offset");
}

Var activation(Tape& tp, Var x, ActivationKind kind) {
  Tensor out = apply_activation(kind, tp.value(x));
  return tp.push(
      std::move(out), {x},
      [x, kind](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) {
          const Tensor& xv = t.value(x);
          for (std::size_t i = 0; i < g.size(); ++i)
            (*gx)[i] += g[i] * activation_deriv(kind, xv[i]);
        }
      },
      "activation");
}

Var conv2d(Tape& tp, Var x, Var kernel, std::optional<Var> bias,
           Padding padding) {
  const Tensor& xv = tp.value(x);
  const Tensor& kv = tp.value(kernel);
  const Tensor* bv = bias ? &tp.value(*bias) : nullptr;
  Tensor out = conv2d(xv, kv, bv, padding);
  Var b = bias.value_or(Var{});
  return tp.push(
      std::move(out), {x, kernel, b},
      [x, kernel, b, padding](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_target(x);
        Tensor* gk = t.grad_target(kernel);
        Tensor* gb = b.valid() ? t.grad_target(b) : nullptr;
        if (gx || gk || gb)
          conv2d_backward(t.value(x), t.value(kernel), padding, g, gx, gk, gb);
      },
      "conv2d");
}

Var concat_channels(Tape& tp, Var x, Var y) {
  Tensor out = concat_channels_eval(tp.value(x), tp.value(y));
  int cx = tp.value(x).shape().c;
  return tp.push(
      std::move(out), {x, y},
      [x, y, cx](Tape& t, const Tensor& g) {
        Shape s = g.shape();
        if (Tensor* gx = t.grad_target(x)) {
          for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < cx; ++c)
              for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w)
                  gx->at(n, c, h, w) += g.at(n, c, h, w);
        }
        if (Tensor* gy = t.grad_target(y)) {
          for (int n = 0; n < s.n; ++n)
            for (int c = cx; c < s.c; ++c)
              for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w)
                  gy->at(n, c - cx, h, w) += g.at(n, c, h, w);
        }
      },
      "concat_channels");
}

Var normalize(Tape& tp, Var x, const NormSpec& spec, std::optional<Var> gamma,
              std::optional<Var> beta) {
  if (gamma.has_value() != beta.has_value()) {
    throw ConfigError("normalize on tape needs both gamma and beta or neither");
  }
  const Tensor& xv = tp.value(x);
  const Tensor* gv = gamma ? &tp.value(*gamma) : nullptr;
  const Tensor* bv = beta ? &tp.value(*beta) : nullptr;
  bool tracked = tp.requires_grad(x) ||
                 (gamma && tp.requires_grad(*gamma)) ||
                 (beta && tp.requires_grad(*beta));
  Var gvar = gamma.value_or(Var{});
  Var bvar = beta.value_or(Var{});
  if (!tracked) {
    return tp.push(norm_forward(xv, spec, gv, bv, nullptr), {x, gvar, bvar},
                   nullptr, "normalize");
  }
  auto cache = std::make_shared<NormCache>();
  Tensor out = norm_forward(xv, spec, gv, bv, cache.get());
  bool has_affine = gamma.has_value();
  return tp.push(
      std::move(out), {x, gvar, bvar},
      [cache, x, gvar, bvar, has_affine](Tape& t, const Tensor& g) {
        const Tensor* gm = has_affine ? &t.value(gvar) : nullptr;
        Tensor* gx = t.grad_target(x);
        Tensor* ggamma = has_affine ? t.grad_target(gvar) : nullptr;
        Tensor* gbeta = has_affine ? t.grad_target(bvar) : nullptr;
        if (gx || ggamma || gbeta)
          norm_backward(*cache, gm, g, gx, ggamma, gbeta);
      },
      "normalize");
}

Var crop_center(Tape& tp, Var x, int h, int w) {
  Shape s = tp.value(x).shape();
  if (h > s.h || w > s.w || h <= 0 || w <= 0 || (s.h - h) % 2 != 0 ||
      (s.w - w) % 2 != 0) {
    throw ConfigError("crop_center: cannot crop " + s.str() + " to " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  int oh = (s.h - h) / 2, ow = (s.w - w) / 2;
  const Tensor& xv = tp.value(x);
  Tensor out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          out.at(n, c, i, j) = xv.at(n, c, i + oh, j + ow);
  return tp.push(
      std::move(out), {x},
      [x, oh, ow](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) {
          Shape s = g.shape();
          for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
              for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j)
                  gx->at(n, c, i + oh, j + ow) += g.at(n, c, i, j);
        }
      },
      "crop_center");
}

Var reshape(Tape& tp, Var x, Shape s) {
  const Tensor& xv = tp.value(x);
  if (s.numel() != xv.size()) {
    throw ConfigError("reshape: element count mismatch " +
                      xv.shape().str() + " -> " + s.str());
  }
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i];
  return tp.push(
      std::move(out), {x},
      [x](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x))
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      },
      "reshape");
}

Var sum_scalar(Tape& tp, Var x) {
  Tensor out(Shape{1, 1, 1, 1});
  out[0] = sum_all(tp.value(x));
  return tp.push(
      std::move(out), {x},
      [x](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x)) {
          double gv = g[0];
          for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += gv;
        }
      },
      "sum_scalar");
}

Var mse_loss(Tape& tp, Var pred, Tensor target) {
  const Tensor& pv = tp.value(pred);
  check_same(pv, target, "mse_loss");
  Tensor out(Shape{1, 1, 1, 1});
  out[0] = mse(pv, target);
  auto tgt = std::make_shared<Tensor>(std::move(target));
  return tp.push(
      std::move(out), {pred},
      [pred, tgt](Tape& t, const Tensor& g) {
        if (Tensor* gp = t.grad_target(pred)) {
          const Tensor& pv = t.value(pred);
          double k = 2.0 * g[0] / static_cast<double>(pv.size());
          for (std::size_t i = 0; i < pv.size(); ++i)
            (*gp)[i] += k * (pv[i] - (*tgt)[i]);
        }
      },
      "mse_loss");
}

Var weighted_sum(Tape& tp, Var x, Tensor weights) {
  const Tensor& xv = tp.value(x);
  check_same(xv, weights, "weighted_sum");
  Tensor out(Shape{1, 1, 1, 1});
  out[0] = dot(xv, weights);
  auto w = std::make_shared<Tensor>(std::move(weights));
  return tp.push(
      std::move(out), {x},
      [x, w](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_target(x))
          axpy_inplace(*gx, g[0], *w);
      },
      "weighted_sum");
}

}  // namespace tembed
