// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent reference implementations for the unit
// tests. Nothing here calls into the library's numeric kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/linalg.hpp"

namespace adaptmerge::testing {

using Rand = std::mt19937_64;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rand& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

inline Vector random_vector(std::size_t n, Rand& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vector v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline AdapterLayer random_layer(const AdapterConfig& cfg, Rand& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  return {random_matrix(cfg.m(), cfg.d, rng, s), random_vector(cfg.m(), rng, 0.1), random_matrix(cfg.d, cfg.m(), rng, s),
          random_vector(cfg.d, rng, 0.1)};
}

inline AdapterStack random_stack(const AdapterConfig& cfg, Rand& rng, const std::string& name = "s") {
  AdapterStack s;
  s.config = cfg;
  for (std::size_t l = 0; l < cfg.layers; ++l) s.layers.push_back(random_layer(cfg, rng));
  s.metadata.name = name;
  s.metadata.track = "t";
  return s;
}

inline std::vector<std::size_t> random_perm(std::size_t m, Rand& rng) {
  std::vector<std::size_t> p(m);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline double naive_act(Nonlinearity nl, double x) {
  switch (nl) {
    case Nonlinearity::relu:
      return x > 0.0 ? x : 0.0;
    case Nonlinearity::gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Nonlinearity::identity:
      return x;
  }
  return x;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Scalar loop version of the residual bottleneck.
inline Matrix naive_forward(const AdapterLayer& l, const Matrix& h, Nonlinearity nl) {
  const std::size_t n = h.rows(), d = h.cols(), m = l.w_down.rows();
  Matrix out(n, d);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> z(m);
    for (std::size_t p = 0; p < m; ++p) {
      double acc = l.b_down[p];
      for (std::size_t k = 0; k < d; ++k) acc += h(s, k) * l.w_down(p, k);
      z[p] = naive_act(nl, acc);
    }
    for (std::size_t i = 0; i < d; ++i) {
      double acc = h(s, i) + l.b_up[i];
      for (std::size_t p = 0; p < m; ++p) acc += z[p] * l.w_up(i, p);
      out(s, i) = acc;
    }
  }
  return out;
}

// Minimum-cost permutation by exhaustive enumeration; ties keep the first
// (lexicographically smallest) permutation.
struct OracleAssignment {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> perm;
};

inline OracleAssignment oracle_assignment(const Matrix& c) {
  const std::size_t m = c.rows();
  std::vector<std::size_t> p(m);
  std::iota(p.begin(), p.end(), std::size_t{0});
  OracleAssignment best;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += c(i, p[i]);
    if (s < best.cost) {
      best.cost = s;
      best.perm = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  best.cost /= static_cast<double>(m);
  return best;
}

inline double max_abs(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double max_abs(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const AdapterStack& a, const AdapterStack& b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    m = std::max({m, max_abs(a.layers[l].w_down, b.layers[l].w_down), max_abs(a.layers[l].b_down, b.layers[l].b_down),
                  max_abs(a.layers[l].w_up, b.layers[l].w_up), max_abs(a.layers[l].b_up, b.layers[l].b_up)});
  }
  return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adaptmerge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace adaptmerge::testing
