// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

std::string_view to_string(PlanMode mode) {
  return mode == PlanMode::exact ? "exact" : "sinkhorn";
}

namespace {

void require_finite_cost(const Matrix& cost, const char* op) {
  if (!cost.all_finite()) throw InvalidCostError(std::string(op) + ": cost matrix contains NaN or infinity");
}

void require_square(const Matrix& cost, const char* op) {
  if (cost.rows() != cost.cols()) {
    throw ShapeError(std::string(op) + ": cost must be square, got " + std::to_string(cost.rows()) + "x" +
                     std::to_string(cost.cols()));
  }
  if (cost.rows() == 0) throw ShapeError(std::string(op) + ": cost must be non-empty");
}

TransportPlan vertex_plan(const Matrix& cost, std::vector<std::size_t> perm) {
  const std::size_t m = cost.rows();
  const double w = 1.0 / static_cast<double>(m);
  TransportPlan plan;
  plan.t = Matrix(m, m);
  for (std::size_t i = 0; i < m; ++i) plan.t(i, perm[i]) = w;
  plan.alpha.assign(m, w);
  plan.beta.assign(m, w);
  plan.mode = PlanMode::exact;
  plan.assignment = std::move(perm);
  plan.cost = plan_cost(plan, cost);
  return plan;
}

// Shortest augmenting path assignment with row potentials u and column
// potentials v such that cost(i, j) - u[i] - v[j] >= 0, zero on the matching.
struct Assignment {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u;
  std::vector<double> v;
};

Assignment hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.row_to_col[p[j] - 1] = j - 1;
  a.u.assign(u.begin() + 1, u.end());
  a.v.assign(v.begin() + 1, v.end());
  return a;
}

// Every perfect matching on the tight edges (zero reduced cost) is optimal.
// Walk rows in order and give each the smallest tight column that still
// admits a perfect matching of the remaining rows, re-routing the current
// matching along an alternating path when needed.
std::vector<std::size_t> lexicographic_optimum(const Matrix& cost, const Assignment& a) {
  const std::size_t n = cost.rows();
  double scale = 1.0;
  for (double x : cost.data()) scale = std::max(scale, std::abs(x));
  const double tol = 1e-11 * scale;
  auto tight = [&](std::size_t i, std::size_t j) { return cost(i, j) - a.u[i] - a.v[j] <= tol; };

  std::vector<std::size_t> row_to_col = a.row_to_col;
  std::vector<std::size_t> col_to_row(n);
  for (std::size_t i = 0; i < n; ++i) col_to_row[row_to_col[i]] = i;
  std::vector<bool> fixed_col(n, false);

  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> parent_col(n);
  std::vector<bool> seen_col(n);
  std::vector<std::size_t> queue;
  queue.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (fixed_col[j] || !tight(i, j)) continue;
      if (row_to_col[i] == j) break;
      // Row k gives up j and needs a path to the column i gives up.
      const std::size_t k = col_to_row[j];
      const std::size_t target = row_to_col[i];
      std::fill(parent_col.begin(), parent_col.end(), none);
      std::fill(seen_col.begin(), seen_col.end(), false);
      seen_col[j] = true;
      queue.assign(1, k);
      std::size_t found = none;
      // parent_col[x] = column held by the row that reached x, or j for k.
      for (std::size_t head = 0; head < queue.size() && found == none; ++head) {
        const std::size_t row = queue[head];
        const std::size_t via = row == k ? j : row_to_col[row];
        for (std::size_t x = 0; x < n; ++x) {
          if (seen_col[x] || fixed_col[x] || !tight(row, x)) continue;
          seen_col[x] = true;
          parent_col[x] = via;
          if (x == target) {
            found = x;
            break;
          }
          const std::size_t next = col_to_row[x];
          if (next != i) queue.push_back(next);
        }
      }
      if (found == none) continue;
      // Shift each row on the path onto the column it reached.
      std::size_t x = found;
      while (x != j) {
        const std::size_t prev = parent_col[x];
        const std::size_t row = col_to_row[prev];
        row_to_col[row] = x;
        col_to_row[x] = row;
        x = prev;
      }
      row_to_col[i] = j;
      col_to_row[j] = i;
      break;
    }
    fixed_col[row_to_col[i]] = true;
  }
  return row_to_col;
}

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}


// Solves a x = rhs in place by Gaussian elimination with partial pivoting.
// Returns false for a numerically singular system.
bool solve_dense(Matrix a, Vector& rhs) {
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    }
    if (!(std::abs(a(piv, k)) > 1e-300)) return false;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(rhs[k], rhs[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      rhs[i] -= f * rhs[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = rhs[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a(k, j) * rhs[j];
    rhs[k] = s / a(k, k);
  }
  return std::all_of(rhs.begin(), rhs.end(), [](double x) { return std::isfinite(x); });
}

// Entropic dual objective; concave in (f, g).
double dual_objective(const Matrix& cost, double eps, double a, double b, const Vector& f, const Vector& g) {
  double mass = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) mass += std::exp((f[i] + g[j] - cost(i, j)) / eps);
  }
  double lin = 0.0;
  for (double x : f) lin += a * x;
  for (double x : g) lin += b * x;
  const double v = lin - eps * mass;
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

// One damped Newton step on the entropic dual. The Hessian is
// [[diag(r), P], [P^T, diag(c)]] / eps; the last column potential is pinned
// to remove the (1, -1) gauge direction, and h is shifted by a tiny
// multiple of the identity. A step is kept only if it raises
// the dual objective.
bool newton_step(const Matrix& cost, double eps, double a, double b, Vector& f, Vector& g) {
  const std::size_t ma = f.size();
  const std::size_t mb = g.size();
  const std::size_t n = ma + mb - 1;
  Matrix h(n, n);
  Vector rhs(n, 0.0);
  Vector cs(mb, 0.0);
  for (std::size_t i = 0; i < ma; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < mb; ++j) {
      const double t = std::exp((f[i] + g[j] - cost(i, j)) / eps);
      rs += t;
      cs[j] += t;
      if (j + 1 < mb) {
        h(i, ma + j) = t;
        h(ma + j, i) = t;
      }
    }
    h(i, i) = rs;
    rhs[i] = eps * (a - rs);
  }
  for (std::size_t j = 0; j + 1 < mb; ++j) {
    h(ma + j, ma + j) = cs[j];
    rhs[ma + j] = eps * (b - cs[j]);
  }
  // Components of the support joined only by underflowed entries make h
  // singular in practice; a small shift keeps those modes from swamping the step.
  const double shift = 1e-10 * std::max(a, b);
  for (std::size_t k = 0; k < n; ++k) h(k, k) += shift;
  if (!solve_dense(std::move(h), rhs)) return false;

  const double before = dual_objective(cost, eps, a, b, f, g);
  Vector f2(ma), g2(mb);
  for (double step = 1.0; step > 1e-6; step *= 0.5) {
    for (std::size_t i = 0; i < ma; ++i) f2[i] = f[i] + step * rhs[i];
    for (std::size_t j = 0; j < mb; ++j) g2[j] = g[j] + (j + 1 < mb ? step * rhs[ma + j] : 0.0);
    if (dual_objective(cost, eps, a, b, f2, g2) > before) {
      f.swap(f2);
      g.swap(g2);
      return true;
    }
  }
  return false;
}

}  // namespace

TransportPlan solve_exact(const Matrix& cost) {
  require_square(cost, "solve_exact");
  require_finite_cost(cost, "solve_exact");
  const Assignment a = hungarian(cost);
  return vertex_plan(cost, lexicographic_optimum(cost, a));
}

double default_sinkhorn_epsilon(const Matrix& cost) {
  if (cost.size() == 0) return 1.0;
  double s = 0.0;
  for (double x : cost.data()) s += std::abs(x);
  const double mean = s / static_cast<double>(cost.size());
  return mean > 0.0 ? 0.05 * mean : 1.0;
}

TransportPlan solve_sinkhorn(const Matrix& cost, const SinkhornOptions& options) {
  if (cost.rows() == 0 || cost.cols() == 0) throw ShapeError("solve_sinkhorn: cost must be non-empty");
  require_finite_cost(cost, "solve_sinkhorn");
  const double eps = options.epsilon > 0.0 ? options.epsilon : default_sinkhorn_epsilon(cost);
  if (!std::isfinite(eps)) throw ConfigError("solve_sinkhorn: epsilon must be finite");
  if (!(options.tol > 0.0)) throw ConfigError("solve_sinkhorn: tol must be positive");

  const std::size_t ma = cost.rows();
  const std::size_t mb = cost.cols();
  const double a = 1.0 / static_cast<double>(ma);
  const double b = 1.0 / static_cast<double>(mb);
  const double log_a = std::log(a);
  const double log_b = std::log(b);

  double cmax = 0.0;
  for (double x : cost.data()) cmax = std::max(cmax, std::abs(x));

  Vector f(ma, 0.0), g(mb, 0.0);
  Vector scratch(std::max(ma, mb));
  Vector rows(ma);

  // Returns the L1 row residual after a full (f, g) sweep at regularization e.
  auto sweep = [&](double e) {
    for (std::size_t i = 0; i < ma; ++i) {
      for (std::size_t j = 0; j < mb; ++j) scratch[j] = (g[j] - cost(i, j)) / e;
      f[i] = e * (log_a - log_sum_exp({scratch.data(), mb}));
    }
    for (std::size_t j = 0; j < mb; ++j) {
      for (std::size_t i = 0; i < ma; ++i) scratch[i] = (f[i] - cost(i, j)) / e;
      g[j] = e * (log_b - log_sum_exp({scratch.data(), ma}));
    }
    double residual = 0.0;
    for (std::size_t i = 0; i < ma; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < mb; ++j) s += std::exp((f[i] + g[j] - cost(i, j)) / e);
      residual += std::abs(s - a);
    }
    return residual;
  };

  // Anneal from the cost scale down to eps, warm-starting the potentials.
  // Small eps on its own needs O(cmax / eps) sweeps to spread mass.
  constexpr std::size_t kStageSweeps = 50;
  std::size_t iters = 0;
  double stage_eps = std::max(eps, cmax);
  while (stage_eps > eps && iters < options.max_iters) {
    for (std::size_t k = 0; k < kStageSweeps && iters < options.max_iters; ++k) {
      ++iters;
      if (sweep(stage_eps) <= 1e-3) break;
    }
    stage_eps = std::max(eps, 0.5 * stage_eps);
  }
  // Plain sweeps converge linearly at a rate that collapses when two
  // assignments cost almost the same; Newton steps on the dual take over
  // after a short run of sweeps. Each iteration ends with a sweep, so the
  // column marginals are exact whenever the loop exits.
  constexpr std::size_t kSweepsBeforeNewton = 20;
  std::size_t plain = 0;
  while (iters < options.max_iters) {
    ++iters;
    if (plain >= kSweepsBeforeNewton && !newton_step(cost, eps, a, b, f, g)) plain = 0;
    if (sweep(eps) <= options.tol) break;
    ++plain;
  }

  TransportPlan plan;
  plan.mode = PlanMode::sinkhorn;
  plan.epsilon = eps;
  plan.iterations = iters;
  plan.t = Matrix(ma, mb);
  for (std::size_t i = 0; i < ma; ++i)
    for (std::size_t j = 0; j < mb; ++j) plan.t(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
  plan.alpha.assign(ma, a);
  plan.beta.assign(mb, b);
  const Vector rs = row_sums(plan.t);
  const Vector cs = col_sums(plan.t);
  for (std::size_t i = 0; i < ma; ++i) plan.row_residual += std::abs(rs[i] - a);
  for (std::size_t j = 0; j < mb; ++j) plan.col_residual += std::abs(cs[j] - b);
  plan.converged = plan.row_residual <= options.tol && plan.col_residual <= options.tol;
  plan.cost = plan_cost(plan, cost);
  return plan;
}

double plan_cost(const TransportPlan& plan, const Matrix& cost) {
  if (plan.t.rows() != cost.rows() || plan.t.cols() != cost.cols()) {
    throw ShapeError("plan_cost: plan and cost shapes differ");
  }
  double s = 0.0;
  auto t = plan.t.data();
  auto c = cost.data();
  for (std::size_t k = 0; k < t.size(); ++k) s += c[k] * t[k];
  return s;
}

TransportPlan brute_force_plan(const Matrix& cost) {
  require_square(cost, "brute_force_plan");
  require_finite_cost(cost, "brute_force_plan");
  const std::size_t m = cost.rows();
  if (m > kBruteForceMaxSize) {
    throw SizeLimitError("brute_force_plan: m = " + std::to_string(m) + " exceeds limit " +
                         std::to_string(kBruteForceMaxSize));
  }
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> best = perm;
  double best_sum = std::numeric_limits<double>::infinity();
  // next_permutation walks in lexicographic order, so strict improvement keeps
  // the smallest permutation among ties.
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += cost(i, perm[i]);
    if (s < best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return vertex_plan(cost, std::move(best));
}

}  // namespace adaptmerge
