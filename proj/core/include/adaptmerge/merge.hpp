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

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/align.hpp"

namespace adaptmerge {

enum class MergeKind { sum, avg, ot_wts, ot_acts };

std::string_view to_string(MergeKind kind);
// Accepts sum, avg, wts, acts (and the ot_ prefixed spellings).
MergeKind parse_merge_kind(std::string_view name);

struct MergeStrategy {
  MergeKind kind = MergeKind::avg;
  SolverOptions solver;
  bool include_bias_in_cost = false;

  bool uses_transport() const { return kind == MergeKind::ot_wts || kind == MergeKind::ot_acts; }
};

struct InputInfo {
  std::string name;
  std::string track;
  std::string source_task;
};

// Parameter budget of the merged adapter versus running the same inputs
// through a fusion layer (n parallel adapters plus one composition layer per
// adapter layer). Bias terms excluded.
struct ParamSummary {
  std::uint64_t adapter_per_layer = 0;
  std::uint64_t composition_per_layer = 0;
  std::uint64_t merged_total = 0;
  std::uint64_t fusion_total = 0;
};

ParamSummary summarize_params(const AdapterConfig& cfg, std::size_t n_adapters);

struct LayerTransport {
  TransportPlan plan;
  Matrix ground_cost;
};

struct MergeReport {
  MergeStrategy strategy;
  std::size_t n_inputs = 0;
  std::string anchor;  // empty for sum / avg
  std::vector<InputInfo> inputs;
  // transport[j][l]: input j + 1 aligned to the anchor at layer l.
  std::vector<std::vector<LayerTransport>> transport;
  ParamSummary params;

  // Sum over aligned inputs, per layer. Empty unless the strategy uses OT.
  std::vector<double> per_layer_transport_cost() const;
  double total_transport_cost() const;
};

struct MergeResult {
  AdapterStack merged;
  MergeReport report;
};

// Elementwise sum of every tensor (n >= 1, identical configs).
AdapterStack merge_sum(std::span<const AdapterStack> stacks);

// Elementwise mean of every tensor.
AdapterStack merge_avg(std::span<const AdapterStack> stacks);

// Aligns stacks[1..] to stacks[0] and averages all n of them, the anchor
// included. n >= 2. `probes` is required for ot_acts.
MergeResult merge_ot(std::span<const AdapterStack> stacks, const MergeStrategy& strategy,
                     const ProbeBatch* probes = nullptr);

// Dispatches on strategy.kind; sum and avg produce a report without transport.
MergeResult merge(std::span<const AdapterStack> stacks, const MergeStrategy& strategy,
                  const ProbeBatch* probes = nullptr);

// Stacks whose metadata.track equals `track`, in order. Throws
// EmptySelectionError when nothing matches.
std::vector<AdapterStack> filter_same_track(std::span<const AdapterStack> stacks, std::string_view track);

}  // namespace adaptmerge
