// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

std::string_view to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::relu:
      return "relu";
    case Nonlinearity::gelu:
      return "gelu";
    case Nonlinearity::identity:
      return "identity";
  }
  return "unknown";
}

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "relu") return Nonlinearity::relu;
  if (name == "gelu") return Nonlinearity::gelu;
  if (name == "identity") return Nonlinearity::identity;
  throw ConfigError("unknown nonlinearity '" + std::string(name) + "' (expected relu, gelu or identity)");
}

double activate(Nonlinearity nl, double x) {
  switch (nl) {
    case Nonlinearity::relu:
      return x > 0.0 ? x : 0.0;
    case Nonlinearity::gelu:
      return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Nonlinearity::identity:
      return x;
  }
  return x;
}

double activate_derivative(Nonlinearity nl, double x) {
  switch (nl) {
    case Nonlinearity::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Nonlinearity::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
    case Nonlinearity::identity:
      return 1.0;
  }
  return 1.0;
}

void AdapterConfig::validate() const {
  if (r == 0) throw ConfigError("reduction factor r must be >= 1");
  if (d == 0) throw ConfigError("model dimension d must be >= 1");
  if (d % r != 0) {
    throw ConfigError("d = " + std::to_string(d) + " is not divisible by r = " + std::to_string(r));
  }
  if (layers == 0) throw ConfigError("layer count must be >= 1");
}

std::string describe(const AdapterConfig& cfg) {
  return "d=" + std::to_string(cfg.d) + " r=" + std::to_string(cfg.r) + " layers=" + std::to_string(cfg.layers) +
         " nonlinearity=" + std::string(to_string(cfg.nonlinearity));
}

AdapterLayer AdapterLayer::zeros(const AdapterConfig& cfg) {
  const std::size_t m = cfg.m();
  return {Matrix(m, cfg.d), Vector(m, 0.0), Matrix(cfg.d, m), Vector(cfg.d, 0.0)};
}

void AdapterLayer::validate(const AdapterConfig& cfg) const {
  const std::size_t m = cfg.m();
  if (w_down.rows() != m || w_down.cols() != cfg.d) throw ShapeError("w_down must be m x d");
  if (b_down.size() != m) throw ShapeError("b_down must have length m");
  if (w_up.rows() != cfg.d || w_up.cols() != m) throw ShapeError("w_up must be d x m");
  if (b_up.size() != cfg.d) throw ShapeError("b_up must have length d");
  auto finite = [](double x) { return std::isfinite(x); };
  if (!w_down.all_finite() || !w_up.all_finite() || !std::all_of(b_down.begin(), b_down.end(), finite) ||
      !std::all_of(b_up.begin(), b_up.end(), finite)) {
    throw ValidationError("adapter layer contains non-finite values");
  }
}

AdapterStack AdapterStack::zeros(const AdapterConfig& cfg) {
  cfg.validate();
  AdapterStack s;
  s.config = cfg;
  s.layers.assign(cfg.layers, AdapterLayer::zeros(cfg));
  return s;
}

void AdapterStack::validate() const {
  config.validate();
  if (layers.size() != config.layers) {
    throw ShapeError("stack '" + metadata.name + "' has " + std::to_string(layers.size()) + " layers, config says " +
                      std::to_string(config.layers));
  }
  for (const auto& l : layers) l.validate(config);
}

namespace {

void check_shapes(const AdapterLayer& layer, const AdapterConfig& cfg) {
  const std::size_t m = cfg.m();
  if (layer.w_down.rows() != m || layer.w_down.cols() != cfg.d || layer.b_down.size() != m ||
      layer.w_up.rows() != cfg.d || layer.w_up.cols() != m || layer.b_up.size() != cfg.d) {
    throw ShapeError("adapter layer shapes do not match " + describe(cfg));
  }
}

// Pre-activations h * w_down^T + b_down, n x m.
Matrix bottleneck_preact(const AdapterLayer& layer, const Matrix& h, const AdapterConfig& cfg) {
  check_shapes(layer, cfg);
  if (h.cols() != cfg.d) {
    throw ShapeError("input has " + std::to_string(h.cols()) + " columns, expected d = " + std::to_string(cfg.d));
  }
  Matrix u = matmul(h, transpose(layer.w_down));
  for (std::size_t s = 0; s < u.rows(); ++s) {
    auto r = u.row(s);
    for (std::size_t p = 0; p < r.size(); ++p) r[p] += layer.b_down[p];
  }
  return u;
}

}  // namespace

Matrix adapter_forward(const AdapterLayer& layer, const Matrix& h, const AdapterConfig& cfg) {
  Matrix a = bottleneck_preact(layer, h, cfg);
  for (double& x : a.data()) x = activate(cfg.nonlinearity, x);
  Matrix out = matmul(a, transpose(layer.w_up));
  for (std::size_t s = 0; s < out.rows(); ++s) {
    auto o = out.row(s);
    auto in = h.row(s);
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = in[k] + (o[k] + layer.b_up[k]);
  }
  return out;
}

Matrix stack_forward(const AdapterStack& stack, const Matrix& h) {
  Matrix x = h;
  for (const auto& layer : stack.layers) x = adapter_forward(layer, x, stack.config);
  return x;
}

Matrix bottleneck_activations(const AdapterLayer& layer, const Matrix& probe, const AdapterConfig& cfg) {
  if (probe.rows() == 0) throw ShapeError("probe must contain at least one row");
  Matrix a = bottleneck_preact(layer, probe, cfg);
  for (double& x : a.data()) x = activate(cfg.nonlinearity, x);
  return transpose(a);
}

std::uint64_t param_count(const AdapterConfig& cfg, ParamKind kind, bool include_bias) {
  const std::uint64_t d = cfg.d;
  switch (kind) {
    case ParamKind::adapter: {
      const std::uint64_t m = cfg.m();
      // 2 d m == 2 d^2 / r whenever r divides d.
      return 2 * d * m + (include_bias ? m + d : 0);
    }
    case ParamKind::fusion_composition:
      return 3 * d * d + (include_bias ? 3 * d : 0);
  }
  return 0;
}

AdapterLayer permute_bottleneck(const AdapterLayer& layer, std::span<const std::size_t> perm) {
  const std::size_t m = layer.w_down.rows();
  if (perm.size() != m) throw ShapeError("permutation length does not match bottleneck width");
  std::vector<bool> seen(m, false);
  for (std::size_t src : perm) {
    if (src >= m || seen[src]) throw ConfigError("not a permutation of the bottleneck neurons");
    seen[src] = true;
  }
  AdapterLayer out = layer;
  for (std::size_t p = 0; p < m; ++p) {
    const std::size_t src = perm[p];
    std::copy(layer.w_down.row(src).begin(), layer.w_down.row(src).end(), out.w_down.row(p).begin());
    out.b_down[p] = layer.b_down[src];
    for (std::size_t k = 0; k < layer.w_up.rows(); ++k) out.w_up(k, p) = layer.w_up(k, src);
  }
  return out;
}

}  // namespace adaptmerge
