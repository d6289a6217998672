// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/merge.hpp"

#include <string>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

std::string_view to_string(MergeKind kind) {
  switch (kind) {
    case MergeKind::sum:
      return "sum";
    case MergeKind::avg:
      return "avg";
    case MergeKind::ot_wts:
      return "wts";
    case MergeKind::ot_acts:
      return "acts";
  }
  return "unknown";
}

MergeKind parse_merge_kind(std::string_view name) {
  if (name == "sum") return MergeKind::sum;
  if (name == "avg") return MergeKind::avg;
  if (name == "wts" || name == "ot_wts") return MergeKind::ot_wts;
  if (name == "acts" || name == "ot_acts") return MergeKind::ot_acts;
  throw ConfigError("unknown merge method '" + std::string(name) + "' (expected sum, avg, wts or acts)");
}

ParamSummary summarize_params(const AdapterConfig& cfg, std::size_t n_adapters) {
  ParamSummary s;
  s.adapter_per_layer = param_count(cfg, ParamKind::adapter);
  s.composition_per_layer = param_count(cfg, ParamKind::fusion_composition);
  s.merged_total = s.adapter_per_layer * cfg.layers;
  s.fusion_total = (n_adapters * s.adapter_per_layer + s.composition_per_layer) * cfg.layers;
  return s;
}

std::vector<double> MergeReport::per_layer_transport_cost() const {
  std::vector<double> costs;
  for (const auto& input : transport) {
    if (costs.empty()) costs.assign(input.size(), 0.0);
    for (std::size_t l = 0; l < input.size(); ++l) costs[l] += input[l].plan.cost;
  }
  return costs;
}

double MergeReport::total_transport_cost() const {
  double total = 0.0;
  for (double c : per_layer_transport_cost()) total += c;
  return total;
}

namespace {

void require_compatible(std::span<const AdapterStack> stacks, std::size_t min_count, const char* op) {
  if (stacks.size() < min_count) {
    throw ConfigError(std::string(op) + " needs at least " + std::to_string(min_count) + " adapter stack(s), got " +
                      std::to_string(stacks.size()));
  }
  for (const auto& s : stacks) s.validate();
  const AdapterConfig& ref = stacks.front().config;
  for (std::size_t j = 1; j < stacks.size(); ++j) {
    if (!(stacks[j].config == ref)) {
      throw ConfigError(std::string(op) + ": '" + stacks[j].metadata.name + "' has " + describe(stacks[j].config) +
                        " but '" + stacks.front().metadata.name + "' has " + describe(ref));
    }
  }
}

std::string join_field(std::span<const AdapterStack> stacks, std::string AdapterMetadata::*field) {
  std::string out;
  for (std::size_t j = 0; j < stacks.size(); ++j) {
    if (j > 0) out += '+';
    out += stacks[j].metadata.*field;
  }
  return out;
}

AdapterMetadata merged_metadata(std::span<const AdapterStack> stacks) {
  AdapterMetadata md;
  md.name = join_field(stacks, &AdapterMetadata::name);
  md.source_task = join_field(stacks, &AdapterMetadata::source_task);
  md.track = stacks.front().metadata.track;
  for (const auto& s : stacks) {
    if (s.metadata.track != md.track) {
      md.track = "mixed";
      break;
    }
  }
  return md;
}

void accumulate(Vector& into, const Vector& x) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += x[i];
}

void accumulate(Matrix& into, const Matrix& x) {
  auto a = into.data();
  auto b = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename F>
void for_each_tensor(AdapterLayer& layer, F&& f) {
  f(layer.w_down.data());
  f(std::span<double>(layer.b_down));
  f(layer.w_up.data());
  f(std::span<double>(layer.b_up));
}

AdapterStack sum_unchecked(std::span<const AdapterStack> stacks) {
  AdapterStack out = stacks.front();
  for (std::size_t j = 1; j < stacks.size(); ++j) {
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      const AdapterLayer& src = stacks[j].layers[l];
      AdapterLayer& dst = out.layers[l];
      accumulate(dst.w_down, src.w_down);
      accumulate(dst.b_down, src.b_down);
      accumulate(dst.w_up, src.w_up);
      accumulate(dst.b_up, src.b_up);
    }
  }
  out.metadata = merged_metadata(stacks);
  return out;
}

InputInfo info_of(const AdapterStack& s) {
  return {s.metadata.name, s.metadata.track, s.metadata.source_task};
}

MergeReport base_report(std::span<const AdapterStack> stacks, const MergeStrategy& strategy) {
  MergeReport report;
  report.strategy = strategy;
  report.n_inputs = stacks.size();
  for (const auto& s : stacks) report.inputs.push_back(info_of(s));
  report.params = summarize_params(stacks.front().config, stacks.size());
  return report;
}

}  // namespace

AdapterStack merge_sum(std::span<const AdapterStack> stacks) {
  require_compatible(stacks, 1, "merge_sum");
  return sum_unchecked(stacks);
}

AdapterStack merge_avg(std::span<const AdapterStack> stacks) {
  require_compatible(stacks, 1, "merge_avg");
  AdapterStack out = sum_unchecked(stacks);
  const double n = static_cast<double>(stacks.size());
  for (auto& layer : out.layers) {
    for_each_tensor(layer, [n](std::span<double> t) {
      for (double& x : t) x /= n;
    });
  }
  return out;
}

MergeResult merge_ot(std::span<const AdapterStack> stacks, const MergeStrategy& strategy, const ProbeBatch* probes) {
  if (!strategy.uses_transport()) throw ConfigError("merge_ot requires the wts or acts strategy");
  require_compatible(stacks, 2, "merge_ot");
  GroundMetric metric;
  metric.kind = strategy.kind == MergeKind::ot_acts ? GroundMetricKind::acts : GroundMetricKind::wts;
  metric.include_bias = strategy.include_bias_in_cost;
  if (metric.kind == GroundMetricKind::acts && probes == nullptr) {
    throw ConfigError("acts merging requires a probe batch");
  }

  MergeResult result;
  result.report = base_report(stacks, strategy);
  result.report.anchor = stacks.front().metadata.name;

  std::vector<AdapterStack> aligned;
  aligned.reserve(stacks.size());
  aligned.push_back(stacks.front());
  for (std::size_t j = 1; j < stacks.size(); ++j) {
    StackAlignment a = align_stack(stacks.front(), stacks[j], metric, strategy.solver, probes);
    std::vector<LayerTransport> layers;
    for (std::size_t l = 0; l < a.plans.size(); ++l) {
      layers.push_back({std::move(a.plans[l]), std::move(a.ground_costs[l])});
    }
    result.report.transport.push_back(std::move(layers));
    aligned.push_back(std::move(a.aligned));
  }
  result.merged = merge_avg(aligned);
  result.merged.metadata = merged_metadata(stacks);
  return result;
}

MergeResult merge(std::span<const AdapterStack> stacks, const MergeStrategy& strategy, const ProbeBatch* probes) {
  if (strategy.uses_transport()) return merge_ot(stacks, strategy, probes);
  MergeResult result;
  result.merged = strategy.kind == MergeKind::sum ? merge_sum(stacks) : merge_avg(stacks);
  result.report = base_report(stacks, strategy);
  return result;
}

std::vector<AdapterStack> filter_same_track(std::span<const AdapterStack> stacks, std::string_view track) {
  std::vector<AdapterStack> out;
  for (const auto& s : stacks) {
    if (s.metadata.track == track) out.push_back(s);
  }
  if (out.empty()) {
    throw EmptySelectionError("no adapter belongs to track '" + std::string(track) + "'");
  }
  return out;
}

}  // namespace adaptmerge
