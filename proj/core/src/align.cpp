// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/align.hpp"

#include <string>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

std::string_view to_string(GroundMetricKind kind) {
  return kind == GroundMetricKind::wts ? "wts" : "acts";
}

std::string_view to_string(SolverKind kind) {
  return kind == SolverKind::exact ? "exact" : "sinkhorn";
}

void ProbeBatch::validate() const {
  if (n == 0) throw ValidationError("probe batch is empty (n = 0)");
  if (d == 0) throw ValidationError("probe batch has d = 0");
  if (layers.empty()) throw ValidationError("probe batch has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].rows() != n || layers[l].cols() != d) {
      throw ValidationError("probe layer " + std::to_string(l) + " is not n x d");
    }
    if (!layers[l].all_finite()) throw ValidationError("probe layer " + std::to_string(l) + " has non-finite values");
  }
}

namespace {

Matrix incoming_rows(const AdapterLayer& layer, bool include_bias) {
  if (!include_bias) return layer.w_down;
  const std::size_t m = layer.w_down.rows();
  const std::size_t d = layer.w_down.cols();
  Matrix rows(m, d + 1);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t k = 0; k < d; ++k) rows(p, k) = layer.w_down(p, k);
    rows(p, d) = layer.b_down[p];
  }
  return rows;
}

Matrix as_column(const Vector& v) {
  return Matrix(v.size(), 1, v);
}

Vector column_of(const Matrix& m) {
  Vector v(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) v[i] = m(i, 0);
  return v;
}

}  // namespace

Matrix ground_cost_wts(const AdapterLayer& anchor, const AdapterLayer& other, const AdapterConfig& cfg,
                       bool include_bias) {
  anchor.validate(cfg);
  other.validate(cfg);
  return pairwise_sq_dist(incoming_rows(anchor, include_bias), incoming_rows(other, include_bias));
}

Matrix ground_cost_acts(const AdapterLayer& anchor, const AdapterLayer& other, const Matrix& probe,
                        const AdapterConfig& cfg) {
  anchor.validate(cfg);
  other.validate(cfg);
  if (probe.cols() != cfg.d) {
    throw ShapeError("probe has " + std::to_string(probe.cols()) + " columns, adapters expect d = " +
                     std::to_string(cfg.d));
  }
  return pairwise_sq_dist(bottleneck_activations(anchor, probe, cfg), bottleneck_activations(other, probe, cfg));
}

AlignmentResult align_layer(const AdapterLayer& anchor, const AdapterLayer& other, const AdapterConfig& cfg,
                            const GroundMetric& metric, const SolverOptions& solver, const Matrix* probe) {
  Matrix cost;
  if (metric.kind == GroundMetricKind::acts) {
    if (probe == nullptr) throw ConfigError("acts ground metric requires a probe batch");
    cost = ground_cost_acts(anchor, other, *probe, cfg);
  } else {
    cost = ground_cost_wts(anchor, other, cfg, metric.include_bias);
  }
  // Rows: other's neurons, columns: anchor's neurons.
  cost = transpose(cost);

  AlignmentResult result;
  result.plan = solver.kind == SolverKind::exact ? solve_exact(cost) : solve_sinkhorn(cost, solver.sinkhorn);
  const Vector beta = col_sums(result.plan.t);

  // diag(1/beta) T^T and T diag(1/beta); formed first so that an exact plan
  // becomes a 0/1 permutation matrix and the products below are exact.
  const Matrix into_anchor = diag_inv_scale_left(beta, transpose(result.plan.t));
  const Matrix from_other = diag_inv_scale_right(result.plan.t, beta);

  result.aligned.w_down = matmul(into_anchor, other.w_down);
  result.aligned.b_down = column_of(matmul(into_anchor, as_column(other.b_down)));
  result.aligned.w_up = matmul(other.w_up, from_other);
  result.aligned.b_up = other.b_up;
  result.ground_cost = std::move(cost);
  return result;
}

StackAlignment align_stack(const AdapterStack& anchor, const AdapterStack& other, const GroundMetric& metric,
                           const SolverOptions& solver, const ProbeBatch* probes) {
  anchor.validate();
  other.validate();
  if (!(anchor.config == other.config)) {
    throw ConfigError("cannot align '" + other.metadata.name + "' (" + describe(other.config) + ") to '" +
                      anchor.metadata.name + "' (" + describe(anchor.config) + ")");
  }
  const AdapterConfig& cfg = anchor.config;
  if (metric.kind == GroundMetricKind::acts) {
    if (probes == nullptr) throw ConfigError("acts ground metric requires probe batches");
    probes->validate();
    if (probes->layers.size() != cfg.layers) {
      throw ConfigError("probe batch has " + std::to_string(probes->layers.size()) + " layers, adapters have " +
                        std::to_string(cfg.layers));
    }
    if (probes->d != cfg.d) throw ShapeError("probe batch d does not match adapter d");
  }

  StackAlignment out;
  out.aligned.config = cfg;
  out.aligned.metadata = other.metadata;
  out.aligned.metadata.aligned_to = anchor.metadata.name;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Matrix* probe = metric.kind == GroundMetricKind::acts ? &probes->layers[l] : nullptr;
    AlignmentResult r = align_layer(anchor.layers[l], other.layers[l], cfg, metric, solver, probe);
    out.aligned.layers.push_back(std::move(r.aligned));
    out.plans.push_back(std::move(r.plan));
    out.ground_costs.push_back(std::move(r.ground_cost));
  }
  return out;
}

}  // namespace adaptmerge
