// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/linalg.hpp"
#include "adaptmerge/ot.hpp"

namespace adaptmerge {

// Inputs sampled at each adapter layer, n x d per layer. Activation-based
// alignment needs the same batch for every adapter being compared.
struct ProbeBatch {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<Matrix> layers;

  void validate() const;

  friend bool operator==(const ProbeBatch&, const ProbeBatch&) = default;
};

enum class GroundMetricKind { wts, acts };

std::string_view to_string(GroundMetricKind kind);

struct GroundMetric {
  GroundMetricKind kind = GroundMetricKind::wts;
  bool include_bias = false;  // wts only: append b_down[p] to neuron p's row
};

enum class SolverKind { exact, sinkhorn };

std::string_view to_string(SolverKind kind);

struct SolverOptions {
  SolverKind kind = SolverKind::exact;
  SinkhornOptions sinkhorn;
};

struct AlignmentResult {
  AdapterLayer aligned;
  TransportPlan plan;
  Matrix ground_cost;
};

// Squared distances between incoming weight rows of the bottleneck neurons.
Matrix ground_cost_wts(const AdapterLayer& anchor, const AdapterLayer& other, const AdapterConfig& cfg,
                       bool include_bias);

// Squared distances between bottleneck activation profiles on a shared probe.
Matrix ground_cost_acts(const AdapterLayer& anchor, const AdapterLayer& other, const Matrix& probe,
                        const AdapterConfig& cfg);

// Rewrites `other` in the anchor's bottleneck coordinates. The plan T couples
// other's neurons (rows) with the anchor's neurons (columns), solved on the
// transposed ground cost, and beta holds its column sums:
//   w_down' = diag(1/beta) T^T w_down     b_down' = diag(1/beta) T^T b_down
//   w_up'   = w_up T diag(1/beta)         b_up'   = b_up
// The adapter input and output keep the identity coupling, so in exact mode
// this is a pure relabelling of bottleneck neurons. `ground_cost` in the
// result is stored in the plan's orientation.
// `probe` is required for the acts metric and ignored otherwise.
AlignmentResult align_layer(const AdapterLayer& anchor, const AdapterLayer& other, const AdapterConfig& cfg,
                            const GroundMetric& metric, const SolverOptions& solver, const Matrix* probe = nullptr);

struct StackAlignment {
  AdapterStack aligned;
  std::vector<TransportPlan> plans;   // one per layer
  std::vector<Matrix> ground_costs;   // one per layer
};

// align_layer applied layer by layer. `probes` must hold one batch per layer
// for the acts metric.
StackAlignment align_stack(const AdapterStack& anchor, const AdapterStack& other, const GroundMetric& metric,
                           const SolverOptions& solver, const ProbeBatch* probes = nullptr);

}  // namespace adaptmerge
