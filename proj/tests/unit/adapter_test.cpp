// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/errors.hpp"
#include "support.hpp"

namespace adaptmerge {
namespace {

using testing::max_abs;
using testing::naive_forward;
using testing::Rand;
using testing::random_layer;
using testing::random_matrix;
using testing::random_perm;

TEST(AdapterConfig, Validation) {
  EXPECT_NO_THROW((AdapterConfig{32, 4, 2, Nonlinearity::relu}.validate()));
  EXPECT_THROW((AdapterConfig{30, 4, 1, Nonlinearity::relu}.validate()), ConfigError);
  EXPECT_THROW((AdapterConfig{32, 0, 1, Nonlinearity::relu}.validate()), ConfigError);
  EXPECT_THROW((AdapterConfig{4, 8, 1, Nonlinearity::relu}.validate()), ConfigError);
  EXPECT_THROW((AdapterConfig{32, 4, 0, Nonlinearity::relu}.validate()), ConfigError);
  EXPECT_EQ((AdapterConfig{768, 16, 1, Nonlinearity::relu}.m()), 48u);
}

TEST(Nonlinearity, NamesRoundTrip) {
  for (auto nl : {Nonlinearity::relu, Nonlinearity::gelu, Nonlinearity::identity}) {
    EXPECT_EQ(parse_nonlinearity(to_string(nl)), nl);
  }
  EXPECT_THROW(parse_nonlinearity("tanh"), ConfigError);
}

TEST(Nonlinearity, Values) {
  EXPECT_EQ(activate(Nonlinearity::relu, -2.0), 0.0);
  EXPECT_EQ(activate(Nonlinearity::relu, 2.5), 2.5);
  EXPECT_EQ(activate(Nonlinearity::identity, -2.5), -2.5);
  // x * Phi(x) at 1 and -1.
  EXPECT_NEAR(activate(Nonlinearity::gelu, 1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(activate(Nonlinearity::gelu, -1.0), -0.15865525393145707, 1e-15);
}

TEST(Nonlinearity, DerivativeMatchesDifferences) {
  for (auto nl : {Nonlinearity::relu, Nonlinearity::gelu, Nonlinearity::identity}) {
    for (double x : {-1.7, -0.3, 0.4, 2.2}) {
      const double h = 1e-6;
      const double fd = (activate(nl, x + h) - activate(nl, x - h)) / (2 * h);
      EXPECT_NEAR(activate_derivative(nl, x), fd, 1e-8) << to_string(nl) << " at " << x;
    }
  }
}

TEST(AdapterForward, ZeroAdapterPassesThrough) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  Rand rng(1);
  const Matrix h = random_matrix(5, 8, rng);
  EXPECT_EQ(adapter_forward(AdapterLayer::zeros(cfg), h, cfg), h);
}

TEST(AdapterForward, HandExample) {
  const AdapterConfig cfg{2, 2, 1, Nonlinearity::relu};
  const AdapterLayer l{Matrix{{1, 0}}, Vector{0}, Matrix{{1}, {0}}, Vector{0, 0}};
  EXPECT_EQ(adapter_forward(l, Matrix{{2, 5}}, cfg), (Matrix{{4, 5}}));
}

TEST(AdapterForward, MatchesScalarLoop) {
  Rand rng(2);
  for (auto nl : {Nonlinearity::relu, Nonlinearity::gelu, Nonlinearity::identity}) {
    const AdapterConfig cfg{16, 4, 1, nl};
    const AdapterLayer l = random_layer(cfg, rng);
    const Matrix h = random_matrix(100, 16, rng);
    EXPECT_LE(max_abs(adapter_forward(l, h, cfg), naive_forward(l, h, nl)), 1e-10);
  }
}

TEST(AdapterForward, ShapeMismatch) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  EXPECT_THROW(adapter_forward(AdapterLayer::zeros(cfg), Matrix(3, 7), cfg), ShapeError);
  AdapterLayer bad = AdapterLayer::zeros(cfg);
  bad.b_up.pop_back();
  EXPECT_THROW(adapter_forward(bad, Matrix(3, 8), cfg), ShapeError);
}

TEST(AdapterForward, ZeroUpProjectionIsIdentity) {
  const AdapterConfig cfg{12, 3, 1, Nonlinearity::gelu};
  Rand rng(3);
  AdapterLayer l = random_layer(cfg, rng);
  l.w_up = Matrix(12, 4);
  std::fill(l.b_up.begin(), l.b_up.end(), 0.0);
  const Matrix h = random_matrix(20, 12, rng);
  EXPECT_EQ(adapter_forward(l, h, cfg), h);
}

TEST(AdapterForward, BottleneckPermutationSymmetry) {
  Rand rng(4);
  for (int t = 0; t < 20; ++t) {
    const AdapterConfig cfg{16, 2, 1, t % 2 ? Nonlinearity::gelu : Nonlinearity::relu};
    const AdapterLayer l = random_layer(cfg, rng);
    const auto perm = random_perm(cfg.m(), rng);
    // Build (P w_down, P b_down, w_up P^T, b_up) by hand.
    AdapterLayer q = l;
    for (std::size_t p = 0; p < cfg.m(); ++p) {
      for (std::size_t k = 0; k < cfg.d; ++k) q.w_down(p, k) = l.w_down(perm[p], k);
      q.b_down[p] = l.b_down[perm[p]];
      for (std::size_t i = 0; i < cfg.d; ++i) q.w_up(i, p) = l.w_up(i, perm[p]);
    }
    EXPECT_EQ(permute_bottleneck(l, perm), q);
    const Matrix h = random_matrix(50, 16, rng);
    EXPECT_LE(max_abs(adapter_forward(q, h, cfg), adapter_forward(l, h, cfg)), 1e-12);
  }
}

TEST(PermuteBottleneck, RejectsNonPermutation) {
  const AdapterConfig cfg{4, 2, 1, Nonlinearity::relu};
  const AdapterLayer l = AdapterLayer::zeros(cfg);
  EXPECT_THROW(permute_bottleneck(l, std::vector<std::size_t>{0, 0}), ConfigError);
  EXPECT_THROW(permute_bottleneck(l, std::vector<std::size_t>{0}), ShapeError);
}

TEST(BottleneckActivations, ZeroProbeGivesBiasActivation) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  Rand rng(5);
  const AdapterLayer l = random_layer(cfg, rng);
  const Matrix a = bottleneck_activations(l, Matrix(3, 8), cfg);
  ASSERT_EQ(a.rows(), 4u);
  ASSERT_EQ(a.cols(), 3u);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a(p, s), std::max(0.0, l.b_down[p]));
}

TEST(BottleneckActivations, LinearCase) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::identity};
  Rand rng(6);
  AdapterLayer l = random_layer(cfg, rng);
  std::fill(l.b_down.begin(), l.b_down.end(), 0.0);
  const Matrix probe = random_matrix(10, 8, rng);
  EXPECT_LE(max_abs(bottleneck_activations(l, probe, cfg), testing::naive_matmul(l.w_down, transpose(probe))), 1e-12);
}

TEST(BottleneckActivations, MatchesLoopOracle) {
  const AdapterConfig cfg{12, 4, 1, Nonlinearity::gelu};
  Rand rng(7);
  const AdapterLayer l = random_layer(cfg, rng);
  const Matrix probe = random_matrix(30, 12, rng);
  const Matrix a = bottleneck_activations(l, probe, cfg);
  for (std::size_t p = 0; p < cfg.m(); ++p)
    for (std::size_t s = 0; s < 30; ++s) {
      double z = l.b_down[p];
      for (std::size_t k = 0; k < 12; ++k) z += probe(s, k) * l.w_down(p, k);
      EXPECT_NEAR(a(p, s), testing::naive_act(cfg.nonlinearity, z), 1e-12);
    }
}

TEST(BottleneckActivations, Errors) {
  const AdapterConfig cfg{8, 2, 1, Nonlinearity::relu};
  EXPECT_THROW(bottleneck_activations(AdapterLayer::zeros(cfg), Matrix(3, 5), cfg), ShapeError);
  EXPECT_THROW(bottleneck_activations(AdapterLayer::zeros(cfg), Matrix(0, 8), cfg), ShapeError);
}

TEST(ParamCount, BertBaseNumbers) {
  const AdapterConfig cfg{768, 16, 1, Nonlinearity::relu};
  EXPECT_EQ(param_count(cfg, ParamKind::adapter), 73728u);
  EXPECT_EQ(param_count(cfg, ParamKind::fusion_composition), 1769472u);
  EXPECT_EQ(param_count(cfg, ParamKind::fusion_composition) / param_count(cfg, ParamKind::adapter), 24u);
}

TEST(ParamCount, WithBiases) {
  const AdapterConfig cfg{768, 16, 1, Nonlinearity::relu};
  EXPECT_EQ(param_count(cfg, ParamKind::adapter, true), 73728u + 48u + 768u);
  EXPECT_EQ(param_count(cfg, ParamKind::fusion_composition, true), 1769472u + 3u * 768u);
}

TEST(ParamCount, MatchesTensorSizes) {
  const AdapterConfig cfg{40, 5, 1, Nonlinearity::relu};
  const AdapterLayer l = AdapterLayer::zeros(cfg);
  EXPECT_EQ(param_count(cfg, ParamKind::adapter), l.w_down.size() + l.w_up.size());
  EXPECT_EQ(param_count(cfg, ParamKind::adapter, true), l.w_down.size() + l.w_up.size() + l.b_down.size() + l.b_up.size());
}

TEST(ParamCount, AdapterAlwaysSmallerThanComposition) {
  for (std::size_t r = 1; r <= 64; ++r) {
    for (std::size_t m : {1u, 3u, 12u}) {
      const AdapterConfig cfg{r * m, r, 1, Nonlinearity::relu};
      EXPECT_LT(param_count(cfg, ParamKind::adapter), param_count(cfg, ParamKind::fusion_composition));
      // Ratio is 3r/2 exactly.
      EXPECT_EQ(2 * param_count(cfg, ParamKind::fusion_composition), 3 * r * param_count(cfg, ParamKind::adapter));
    }
  }
}

TEST(AdapterStack, ValidateAndForward) {
  const AdapterConfig cfg{8, 4, 3, Nonlinearity::relu};
  Rand rng(8);
  AdapterStack s = testing::random_stack(cfg, rng);
  EXPECT_NO_THROW(s.validate());
  const Matrix h = random_matrix(4, 8, rng);
  Matrix want = h;
  for (const auto& l : s.layers) want = naive_forward(l, want, cfg.nonlinearity);
  EXPECT_LE(max_abs(stack_forward(s, h), want), 1e-12);
  s.layers.pop_back();
  EXPECT_THROW(s.validate(), ShapeError);
}

TEST(AdapterLayer, ValidateRejectsNonFinite) {
  const AdapterConfig cfg{4, 2, 1, Nonlinearity::relu};
  AdapterLayer l = AdapterLayer::zeros(cfg);
  l.w_up(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(l.validate(cfg), ValidationError);
}

}  // namespace
}  // namespace adaptmerge
