// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptmerge/linalg.hpp"

namespace adaptmerge {

enum class Nonlinearity { relu, gelu, identity };

std::string_view to_string(Nonlinearity nl);
// Throws ConfigError on an unknown name.
Nonlinearity parse_nonlinearity(std::string_view name);

double activate(Nonlinearity nl, double x);
double activate_derivative(Nonlinearity nl, double x);

// Architecture of a bottleneck adapter: d -> m = d / r -> d, repeated over
// `layers` insertion points.
struct AdapterConfig {
  std::size_t d = 0;
  std::size_t r = 1;
  std::size_t layers = 1;
  Nonlinearity nonlinearity = Nonlinearity::relu;

  std::size_t m() const { return r == 0 ? 0 : d / r; }

  // Throws ConfigError unless r >= 1, d mod r == 0, m >= 1 and layers >= 1.
  void validate() const;

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

std::string describe(const AdapterConfig& cfg);

// One adapter layer. w_down is m x d (row p holds the incoming weights of
// bottleneck neuron p), w_up is d x m (column p holds its outgoing weights).
struct AdapterLayer {
  Matrix w_down;
  Vector b_down;
  Matrix w_up;
  Vector b_up;

  static AdapterLayer zeros(const AdapterConfig& cfg);

  // Throws ShapeError on a shape inconsistent with cfg, ValidationError on a
  // non-finite entry.
  void validate(const AdapterConfig& cfg) const;

  friend bool operator==(const AdapterLayer&, const AdapterLayer&) = default;
};

struct AdapterMetadata {
  std::string name;
  std::string track;
  std::string source_task;
  // Name of the anchor this stack was re-coordinated into; empty if none.
  // Kept in memory only, the container header has no slot for it.
  std::string aligned_to;

  friend bool operator==(const AdapterMetadata&, const AdapterMetadata&) = default;
};

struct AdapterStack {
  AdapterConfig config;
  std::vector<AdapterLayer> layers;
  AdapterMetadata metadata;

  static AdapterStack zeros(const AdapterConfig& cfg);

  void validate() const;

  friend bool operator==(const AdapterStack&, const AdapterStack&) = default;
};

// h + act(h * w_down^T + b_down) * w_up^T + b_up, row by row. h is n x d.
Matrix adapter_forward(const AdapterLayer& layer, const Matrix& h, const AdapterConfig& cfg);

// Applies every layer of the stack in order.
Matrix stack_forward(const AdapterStack& stack, const Matrix& h);

// m x n matrix; row p is bottleneck neuron p's activation over the probe rows.
Matrix bottleneck_activations(const AdapterLayer& layer, const Matrix& probe, const AdapterConfig& cfg);

enum class ParamKind { adapter, fusion_composition };

// Trainable parameters of one layer. Without biases these are 2 d^2 / r for
// an adapter and 3 d^2 for a fusion composition layer (query, key, value).
std::uint64_t param_count(const AdapterConfig& cfg, ParamKind kind, bool include_bias = false);

// Reorders bottleneck neurons: neuron p of the result is neuron perm[p] of
// the input. The layer's input-output function is unchanged.
AdapterLayer permute_bottleneck(const AdapterLayer& layer, std::span<const std::size_t> perm);

}  // namespace adaptmerge
