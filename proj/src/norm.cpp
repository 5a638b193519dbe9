#include "tembed/norm.hpp"

#include <cmath>

namespace tembed {

const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::Batch:
      return "batch";
    case NormKind::Layer:
      return "layer";
    case NormKind::Instance:
      return "instance";
    case NormKind::Group:
      return "group";
  }
  return "?";
}

NormKind norm_kind_from_name(const std::string& name) {
  if (name == "batch") return NormKind::Batch;
  if (name == "layer") return NormKind::Layer;
  if (name == "instance") return NormKind::Instance;
  if (name == "group") return NormKind::Group;
  throw ConfigError("unknown norm kind '" + name +
                    "' (expected batch, layer, instance, or group)");
}

void validate_norm(const NormSpec& spec, int channels) {
  if (spec.eps <= 0.0) {
    throw ConfigError("norm eps must be positive, got " +
                      std::to_string(spec.eps));
  }
  if (spec.kind == NormKind::Group) {
    if (spec.groups <= 0) {
      throw ConfigError("group norm needs groups >= 1, got " +
                        std::to_string(spec.groups));
    }
    if (channels % spec.groups != 0) {
      throw ConfigError("group count " + std::to_string(spec.groups) +
                        " does not divide channel count " +
                        std::to_string(channels));
    }
  }
}

int channels_per_unit(const NormSpec& spec, int channels) {
  validate_norm(spec, channels);
  switch (spec.kind) {
    case NormKind::Batch:
    case NormKind::Instance:
      return 1;
    case NormKind::Layer:
      return channels;
    case NormKind::Group:
      return channels / spec.groups;
  }
  return 1;
}

int UnitMap::unit_of(int n, int c) const {
  switch (kind) {
    case NormKind::Batch:
      return c;
    case NormKind::Instance:
      return n * channels + c;
    case NormKind::Layer:
      return n;
    case NormKind::Group:
      return n * groups + c / (channels / groups);
  }
  return 0;
}

UnitMap make_unit_map(Shape s, const NormSpec& spec) {
  validate_norm(spec, s.c);
  UnitMap m;
  m.batch = s.n;
  m.channels = s.c;
  m.kind = spec.kind;
  m.groups = spec.groups;
  std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  switch (spec.kind) {
    case NormKind::Batch:
      m.num_units = s.c;
      m.unit_size = static_cast<std::size_t>(s.n) * hw;
      break;
    case NormKind::Instance:
      m.num_units = s.n * s.c;
      m.unit_size = hw;
      break;
    case NormKind::Layer:
      m.num_units = s.n;
      m.unit_size = static_cast<std::size_t>(s.c) * hw;
      break;
    case NormKind::Group:
      m.num_units = s.n * spec.groups;
      m.unit_size = static_cast<std::size_t>(s.c / spec.groups) * hw;
      break;
  }
  return m;
}

Tensor norm_forward(const Tensor& x, const NormSpec& spec, const Tensor* gamma,
                    const Tensor* beta, NormCache* cache) {
  Shape s = x.shape();
  UnitMap units = make_unit_map(s, spec);
  if ((gamma == nullptr) != (beta == nullptr)) {
    throw ConfigError("norm affine needs both gamma and beta or neither");
  }
  if (gamma) {
    require_shape(*gamma, Shape{1, s.c, 1, 1}, "norm gamma");
    require_shape(*beta, Shape{1, s.c, 1, 1}, "norm beta");
  }

  std::vector<double> mean(units.num_units, 0.0);
  std::vector<double> var(units.num_units, 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      int u = units.unit_of(n, c);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) mean[u] += x.at(n, c, h, w);
    }
  double inv_m = 1.0 / static_cast<double>(units.unit_size);
  for (auto& v : mean) v *= inv_m;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      int u = units.unit_of(n, c);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          double d = x.at(n, c, h, w) - mean[u];
          var[u] += d * d;
        }
    }
  std::vector<double> inv_std(units.num_units);
  for (int u = 0; u < units.num_units; ++u) {
    inv_std[u] = 1.0 / std::sqrt(var[u] * inv_m + spec.eps);
  }

  Tensor xhat(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      int u = units.unit_of(n, c);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          xhat.at(n, c, h, w) = (x.at(n, c, h, w) - mean[u]) * inv_std[u];
    }

  Tensor out = xhat;
  if (gamma) {
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        double g = gamma->at(0, c, 0, 0), b = beta->at(0, c, 0, 0);
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w)
            out.at(n, c, h, w) = g * xhat.at(n, c, h, w) + b;
      }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->units = units;
  }
  return out;
}

void norm_backward(const NormCache& cache, const Tensor* gamma,
                   const Tensor& gout, Tensor* gx, Tensor* ggamma,
                   Tensor* gbeta) {
  const Tensor& xhat = cache.normalized;
  Shape s = xhat.shape();
  require_shape(gout, s, "norm grad output");
  const UnitMap& units = cache.units;

  if (ggamma || gbeta) {
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int h = 0; h < s.h; ++h)
          for (int w = 0; w < s.w; ++w) {
            double g = gout.at(n, c, h, w);
            if (gbeta) gbeta->at(0, c, 0, 0) += g;
            if (ggamma) ggamma->at(0, c, 0, 0) += g * xhat.at(n, c, h, w);
          }
  }
  if (!gx) return;

  // gtilde = gout * gamma (grad at the pre-affine x_hat). Then per unit:
  // dx = inv_std * (gtilde - mean(gtilde) - x_hat * mean(gtilde*x_hat)).
  std::vector<double> s1(units.num_units, 0.0);
  std::vector<double> s2(units.num_units, 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      int u = units.unit_of(n, c);
      double gm = gamma ? gamma->at(0, c, 0, 0) : 1.0;
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          double gt = gout.at(n, c, h, w) * gm;
          s1[u] += gt;
          s2[u] += gt * xhat.at(n, c, h, w);
        }
    }
  double inv_m = 1.0 / static_cast<double>(units.unit_size);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      int u = units.unit_of(n, c);
      double gm = gamma ? gamma->at(0, c, 0, 0) : 1.0;
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          double gt = gout.at(n, c, h, w) * gm;
          gx->at(n, c, h, w) += cache.inv_std[u] *
                                (gt - s1[u] * inv_m -
                                 xhat.at(n, c, h, w) * s2[u] * inv_m);
        }
    }
}

}  // namespace tembed
