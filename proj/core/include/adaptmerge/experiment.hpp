// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/align.hpp"
#include "adaptmerge/merge.hpp"
#include "adaptmerge/synth.hpp"

namespace adaptmerge {

inline constexpr int kExperimentSchemaVersion = 1;

enum class ProbeSource { backbone, gaussian };

// Everything a directional run needs. Per seed: pretrain one adapter per
// source task of the target's track (and of an unrelated track), merge them
// with each strategy, then score every initialization on the target task
// before and after few-shot training.
struct ExperimentSpec {
  AdapterConfig model{32, 4, 2, Nonlinearity::relu};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t n_source_tasks = 4;
  TrackOptions track;
  std::vector<std::size_t> shots{30};
  TrainConfig pretrain{100, 0.5, 0};
  TrainConfig finetune{40, 0.1, 0};
  std::vector<MergeKind> strategies{MergeKind::sum, MergeKind::avg, MergeKind::ot_wts, MergeKind::ot_acts};
  bool cross_track = true;
  MergeKind track_merge = MergeKind::ot_acts;
  SolverOptions solver;
  ProbeSource probe_source = ProbeSource::backbone;
  std::size_t probe_samples = 256;
};

// Throws SpecError with a JSON pointer to the offending value.
ExperimentSpec parse_experiment_spec(const nlohmann::json& doc);
nlohmann::ordered_json spec_to_json(const ExperimentSpec& spec);

struct MethodScores {
  EvalResult zero_shot;
  std::vector<EvalResult> few_shot;  // one per spec.shots entry
  double mean_few_shot_loss = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  // Keys: "random", "single", the strategy names, and "cross_track_<kind>".
  std::vector<std::pair<std::string, MethodScores>> methods;

  const MethodScores* find(const std::string& name) const;
};

struct Comparison {
  std::string name;
  std::string better;
  std::string worse;
  bool zero_shot = false;  // compare zero-shot loss instead of few-shot loss
  bool strict = false;
  std::size_t wins = 0;
  std::size_t of = 0;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;  // sorted by seed
  std::vector<Comparison> comparisons;

  nlohmann::ordered_json per_seed_json() const;
  nlohmann::ordered_json aggregate_json() const;
  std::string summary_table() const;
};

SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed);
ExperimentResult run_directional_experiment(const ExperimentSpec& spec);

std::string cross_track_key(MergeKind kind);

}  // namespace adaptmerge
