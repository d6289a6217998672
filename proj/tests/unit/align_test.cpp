// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include "adaptmerge/align.hpp"
#include "adaptmerge/errors.hpp"
#include "support.hpp"

namespace adaptmerge {
namespace {

using testing::max_abs;
using testing::Rand;
using testing::random_layer;
using testing::random_matrix;
using testing::random_perm;
using testing::random_stack;

const GroundMetric kWts{GroundMetricKind::wts, false};
const GroundMetric kActs{GroundMetricKind::acts, false};
const SolverOptions kExact{};

SolverOptions sinkhorn(double eps) {
  SolverOptions s;
  s.kind = SolverKind::sinkhorn;
  s.sinkhorn = {eps, 20000, 1e-9};
  return s;
}

Matrix rows_with_bias(const AdapterLayer& l) {
  Matrix r(l.w_down.rows(), l.w_down.cols() + 1);
  for (std::size_t p = 0; p < r.rows(); ++p) {
    for (std::size_t k = 0; k < l.w_down.cols(); ++k) r(p, k) = l.w_down(p, k);
    r(p, l.w_down.cols()) = l.b_down[p];
  }
  return r;
}

TEST(GroundCostWts, SelfHasZeroDiagonal) {
  const AdapterConfig cfg{16, 4, 1, Nonlinearity::relu};
  Rand rng(1);
  const AdapterLayer a = random_layer(cfg, rng);
  const Matrix c = ground_cost_wts(a, a, cfg, false);
  for (std::size_t p = 0; p < cfg.m(); ++p) EXPECT_EQ(c(p, p), 0.0);
}

TEST(GroundCostWts, PermutedCopyHasExactMatches) {
  const AdapterConfig cfg{16, 2, 1, Nonlinearity::relu};
  Rand rng(2);
  const AdapterLayer a = random_layer(cfg, rng);
  const auto perm = random_perm(cfg.m(), rng);
  const Matrix c = ground_cost_wts(a, permute_bottleneck(a, perm), cfg, true);
  // Neuron q of the copy is neuron perm[q] of the anchor.
  for (std::size_t q = 0; q < cfg.m(); ++q) EXPECT_EQ(c(perm[q], q), 0.0);
}

TEST(GroundCostWts, MatchesExplicitRows) {
  const AdapterConfig cfg{12, 3, 1, Nonlinearity::relu};
  Rand rng(3);
  const AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
  EXPECT_LE(max_abs(ground_cost_wts(a, b, cfg, false), pairwise_sq_dist(a.w_down, b.w_down)), 1e-12);
  EXPECT_LE(max_abs(ground_cost_wts(a, b, cfg, true), pairwise_sq_dist(rows_with_bias(a), rows_with_bias(b))), 1e-12);
}

TEST(GroundCostWts, ConfigMismatch) {
  const AdapterConfig cfg{12, 3, 1, Nonlinearity::relu};
  const AdapterConfig other{12, 4, 1, Nonlinearity::relu};
  EXPECT_THROW(ground_cost_wts(AdapterLayer::zeros(cfg), AdapterLayer::zeros(other), cfg, false), Error);
}

TEST(GroundCostActs, SelfAndPermuted) {
  const AdapterConfig cfg{16, 2, 1, Nonlinearity::relu};
  Rand rng(4);
  const AdapterLayer a = random_layer(cfg, rng);
  const Matrix probe = random_matrix(64, 16, rng);
  const Matrix self = ground_cost_acts(a, a, probe, cfg);
  for (std::size_t p = 0; p < cfg.m(); ++p) EXPECT_EQ(self(p, p), 0.0);
  const auto perm = random_perm(cfg.m(), rng);
  const Matrix c = ground_cost_acts(a, permute_bottleneck(a, perm), probe, cfg);
  for (std::size_t q = 0; q < cfg.m(); ++q) EXPECT_EQ(c(perm[q], q), 0.0);
}

TEST(GroundCostActs, LinearCaseMatchesDirectActivations) {
  const AdapterConfig cfg{10, 2, 1, Nonlinearity::identity};
  Rand rng(5);
  AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
  std::fill(a.b_down.begin(), a.b_down.end(), 0.0);
  std::fill(b.b_down.begin(), b.b_down.end(), 0.0);
  const Matrix probe = random_matrix(40, 10, rng);
  // Activations are w_down x for every probe row; the cost is the squared
  // distance of the two profiles.
  const Matrix xa = testing::naive_matmul(a.w_down, transpose(probe));
  const Matrix xb = testing::naive_matmul(b.w_down, transpose(probe));
  const Matrix c = ground_cost_acts(a, b, probe, cfg);
  for (std::size_t p = 0; p < cfg.m(); ++p)
    for (std::size_t q = 0; q < cfg.m(); ++q) {
      double s = 0.0;
      for (std::size_t k = 0; k < 40; ++k) s += (xa(p, k) - xb(q, k)) * (xa(p, k) - xb(q, k));
      EXPECT_NEAR(c(p, q), s, 1e-10 * std::max(1.0, s));
      // Same quantity via the probe Gram matrix: (u - v)^T X^T X (u - v).
      const Matrix gram = testing::naive_matmul(transpose(probe), probe);
      double g = 0.0;
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j)
          g += (a.w_down(p, i) - b.w_down(q, i)) * gram(i, j) * (a.w_down(p, j) - b.w_down(q, j));
      EXPECT_NEAR(c(p, q), g, 1e-9 * std::max(1.0, g));
    }
}

TEST(GroundCostActs, ProbeDimensionMismatch) {
  const AdapterConfig cfg{10, 2, 1, Nonlinearity::relu};
  const AdapterLayer a = AdapterLayer::zeros(cfg);
  EXPECT_THROW(ground_cost_acts(a, a, Matrix(5, 9), cfg), ShapeError);
}

TEST(AlignLayer, SelfAlignmentIsExactIdentity) {
  const AdapterConfig cfg{32, 4, 1, Nonlinearity::relu};
  Rand rng(6);
  const AdapterLayer a = random_layer(cfg, rng);
  const AlignmentResult r = align_layer(a, a, cfg, kWts, kExact);
  EXPECT_EQ(r.aligned, a);
  EXPECT_EQ(r.plan.t, scale(Matrix::identity(cfg.m()), 1.0 / cfg.m()));
}

TEST(AlignLayer, SelfAlignmentWithDuplicateNeurons) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  Rand rng(7);
  AdapterLayer a = random_layer(cfg, rng);
  for (std::size_t k = 0; k < cfg.d; ++k) a.w_down(2, k) = a.w_down(0, k);
  a.b_down[2] = a.b_down[0];
  const AlignmentResult r = align_layer(a, a, cfg, kWts, kExact);
  EXPECT_EQ(r.plan.t, scale(Matrix::identity(cfg.m()), 1.0 / cfg.m()));
  EXPECT_EQ(r.aligned, a);
}

TEST(AlignLayer, RecoversPermutation) {
  const AdapterConfig cfg{32, 4, 1, Nonlinearity::relu};
  Rand rng(8);
  for (int t = 0; t < 20; ++t) {
    const AdapterLayer a = random_layer(cfg, rng);
    const auto perm = random_perm(cfg.m(), rng);
    const AdapterLayer b = permute_bottleneck(a, perm);
    const AlignmentResult r = align_layer(a, b, cfg, kWts, kExact);
    EXPECT_LE(max_abs(r.aligned.w_down, a.w_down), 1e-12);
    EXPECT_LE(max_abs(r.aligned.w_up, a.w_up), 1e-12);
    EXPECT_LE(max_abs(r.aligned.b_down, a.b_down), 1e-12);
    EXPECT_EQ(r.aligned.b_up, a.b_up);
    EXPECT_EQ(r.plan.assignment, perm);
    for (std::size_t q = 0; q < cfg.m(); ++q) EXPECT_EQ(r.plan.t(q, perm[q]), 1.0 / cfg.m());

    const Matrix probe = random_matrix(256, cfg.d, rng);
    const AlignmentResult ra = align_layer(a, b, cfg, kActs, kExact, &probe);
    EXPECT_LE(max_abs(ra.aligned.w_down, a.w_down), 1e-10);
    EXPECT_LE(max_abs(ra.aligned.w_up, a.w_up), 1e-10);
  }
}

TEST(AlignLayer, PreservesFunction) {
  Rand rng(9);
  for (int t = 0; t < 10; ++t) {
    const AdapterConfig cfg{16, 2, 1, t % 2 ? Nonlinearity::gelu : Nonlinearity::relu};
    const AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
    const Matrix h = random_matrix(1000, cfg.d, rng);
    const AlignmentResult r = align_layer(a, b, cfg, kWts, kExact);
    EXPECT_LE(max_abs(adapter_forward(r.aligned, h, cfg), adapter_forward(b, h, cfg)), 1e-10);
    const Matrix probe = random_matrix(64, cfg.d, rng);
    const AlignmentResult ra = align_layer(a, b, cfg, kActs, kExact, &probe);
    EXPECT_LE(max_abs(adapter_forward(ra.aligned, h, cfg), adapter_forward(b, h, cfg)), 1e-10);
  }
}

TEST(AlignLayer, Idempotent) {
  const AdapterConfig cfg{24, 4, 1, Nonlinearity::relu};
  Rand rng(10);
  const AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
  const AdapterLayer once = align_layer(a, b, cfg, kWts, kExact).aligned;
  const AdapterLayer twice = align_layer(a, once, cfg, kWts, kExact).aligned;
  EXPECT_EQ(once, twice);
}

TEST(AlignLayer, GroundCostIsStoredInPlanOrientation) {
  const AdapterConfig cfg{24, 4, 1, Nonlinearity::relu};
  Rand rng(11);
  const AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
  const AlignmentResult r = align_layer(a, b, cfg, kWts, kExact);
  EXPECT_EQ(r.ground_cost, transpose(ground_cost_wts(a, b, cfg, false)));
  EXPECT_NEAR(plan_cost(r.plan, r.ground_cost), r.plan.cost, 1e-12);
}

TEST(AlignLayer, ActsNeedsProbe) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  const AdapterLayer a = AdapterLayer::zeros(cfg);
  EXPECT_THROW(align_layer(a, a, cfg, kActs, kExact), ConfigError);
}

TEST(AlignLayer, SinkhornConvergesToExact) {
  const AdapterConfig cfg{16, 2, 1, Nonlinearity::relu};
  Rand rng(12);
  for (int t = 0; t < 5; ++t) {
    const AdapterLayer a = random_layer(cfg, rng), b = random_layer(cfg, rng);
    const AdapterLayer exact = align_layer(a, b, cfg, kWts, kExact).aligned;
    const Matrix c = ground_cost_wts(a, b, cfg, false);
    double cmax = 0.0;
    for (double v : c.data()) cmax = std::max(cmax, v);
    double prev = std::numeric_limits<double>::infinity();
    double gap = prev;
    for (double f : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6}) {
      const AlignmentResult r = align_layer(a, b, cfg, kWts, sinkhorn(f * cmax));
      ASSERT_TRUE(r.plan.converged) << f;
      gap = std::max(max_abs(r.aligned.w_down, exact.w_down), max_abs(r.aligned.w_up, exact.w_up));
      EXPECT_LE(gap, prev + 1e-15) << f;
      prev = gap;
    }
    EXPECT_LE(gap, 1e-4);
  }
}

TEST(AlignStack, SelfAlignmentIsIdentity) {
  const AdapterConfig cfg{16, 4, 3, Nonlinearity::relu};
  Rand rng(13);
  const AdapterStack a = random_stack(cfg, rng, "anchor");
  const StackAlignment r = align_stack(a, a, kWts, kExact);
  EXPECT_EQ(r.aligned.layers, a.layers);
  EXPECT_EQ(r.plans.size(), 3u);
  EXPECT_EQ(r.aligned.metadata.aligned_to, "anchor");
}

TEST(AlignStack, RecoversPerLayerPermutations) {
  const AdapterConfig cfg{16, 2, 3, Nonlinearity::relu};
  Rand rng(14);
  const AdapterStack a = random_stack(cfg, rng, "anchor");
  AdapterStack b = a;
  b.metadata.name = "other";
  for (auto& l : b.layers) l = permute_bottleneck(l, random_perm(cfg.m(), rng));
  const StackAlignment r = align_stack(a, b, kWts, kExact);
  EXPECT_LE(max_abs(r.aligned, a), 1e-12);
  EXPECT_EQ(r.aligned.metadata.name, "other");
  EXPECT_EQ(r.aligned.metadata.aligned_to, "anchor");

  ProbeBatch probes{64, cfg.d, {}};
  for (std::size_t l = 0; l < cfg.layers; ++l) probes.layers.push_back(random_matrix(64, cfg.d, rng));
  EXPECT_LE(max_abs(align_stack(a, b, kActs, kExact, &probes).aligned, a), 1e-10);
}

TEST(AlignStack, MixedPermutedAndRandomLayers) {
  const AdapterConfig cfg{16, 2, 2, Nonlinearity::relu};
  Rand rng(15);
  const AdapterStack a = random_stack(cfg, rng);
  AdapterStack b = a;
  b.layers[0] = permute_bottleneck(a.layers[0], random_perm(cfg.m(), rng));
  b.layers[1] = random_layer(cfg, rng);
  const StackAlignment r = align_stack(a, b, kWts, kExact);
  EXPECT_LE(max_abs(r.aligned.layers[0].w_down, a.layers[0].w_down), 1e-12);
  EXPECT_LE(max_abs(r.aligned.layers[0].w_up, a.layers[0].w_up), 1e-12);
  const Matrix h = random_matrix(200, cfg.d, rng);
  EXPECT_LE(max_abs(adapter_forward(r.aligned.layers[1], h, cfg), adapter_forward(b.layers[1], h, cfg)), 1e-10);
  EXPECT_LE(max_abs(stack_forward(r.aligned, h), stack_forward(b, h)), 1e-10);
}

TEST(AlignStack, Errors) {
  const AdapterConfig cfg{16, 2, 2, Nonlinearity::relu};
  Rand rng(16);
  const AdapterStack a = random_stack(cfg, rng);
  const AdapterStack other = random_stack({16, 4, 2, Nonlinearity::relu}, rng);
  EXPECT_THROW(align_stack(a, other, kWts, kExact), ConfigError);
  EXPECT_THROW(align_stack(a, a, kActs, kExact), ConfigError);
  ProbeBatch one_layer{8, 16, {random_matrix(8, 16, rng)}};
  EXPECT_THROW(align_stack(a, a, kActs, kExact, &one_layer), Error);
  ProbeBatch wrong_d{8, 15, {random_matrix(8, 15, rng), random_matrix(8, 15, rng)}};
  EXPECT_THROW(align_stack(a, a, kActs, kExact, &wrong_d), Error);
}

}  // namespace
}  // namespace adaptmerge
