// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "adaptmerge/linalg.hpp"

namespace adaptmerge {

enum class PlanMode { exact, sinkhorn };

std::string_view to_string(PlanMode mode);

// A coupling between the rows (source neurons) and columns (target neurons)
// of a cost matrix. All solvers here use uniform marginals.
struct TransportPlan {
  Matrix t;
  Vector alpha;  // prescribed row marginals
  Vector beta;   // prescribed column marginals
  double cost = 0.0;
  PlanMode mode = PlanMode::exact;

  // Vertex plans only: row p is coupled to column assignment[p].
  std::vector<std::size_t> assignment;

  // Sinkhorn diagnostics. Exact plans are always converged.
  bool converged = true;
  std::size_t iterations = 0;
  double epsilon = 0.0;
  double row_residual = 0.0;  // L1 distance between row sums of t and alpha
  double col_residual = 0.0;
};

// Optimal plan for a square cost under uniform marginals 1/m. The optimum is
// a permutation scaled by 1/m; among optimal permutations the lexicographically
// smallest one is returned. O(m^3) shortest augmenting paths.
TransportPlan solve_exact(const Matrix& cost);

struct SinkhornOptions {
  double epsilon = 0.0;  // <= 0 selects default_sinkhorn_epsilon(cost)
  std::size_t max_iters = 10000;
  double tol = 1e-9;
};

// 0.05 * mean(|cost|); falls back to 1.0 for an all-zero cost.
double default_sinkhorn_epsilon(const Matrix& cost);

// Entropy-regularized plan, log-domain updates with epsilon annealing.
// Returns with converged == false instead of throwing when max_iters runs out.
TransportPlan solve_sinkhorn(const Matrix& cost, const SinkhornOptions& options = {});

// Frobenius inner product <cost, plan.t>.
double plan_cost(const TransportPlan& plan, const Matrix& cost);

// Enumerates all m! permutations (m <= 7). Ties go to the lexicographically
// smallest permutation. Intended as a reference for solve_exact.
TransportPlan brute_force_plan(const Matrix& cost);

inline constexpr std::size_t kBruteForceMaxSize = 7;

}  // namespace adaptmerge
