// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string_view>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Parsed text yields unsigned values; documents built in code may hold
// non-negative values typed as signed.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Small reader that remembers where it is in the document.
class SpecReader {
 public:
  SpecReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {}

  void require_object(std::initializer_list<std::string_view> allowed) const {
    if (!node_.is_object()) fail(path_or_root(), "expected an object");
    for (const auto& [key, value] : node_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(path_ + "/" + key, "unknown key");
      }
    }
  }

  bool has(const char* key) const { return node_.contains(key); }

  SpecReader child(const char* key) const { return {node_.at(key), path_ + "/" + key}; }

  std::uint64_t uint(const char* key, std::uint64_t fallback, std::uint64_t min_value = 0) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!is_count(v)) fail(path_ + "/" + key, "expected a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < min_value) fail(path_ + "/" + key, "must be >= " + std::to_string(min_value));
    return x;
  }

  double number(const char* key, double fallback, bool positive) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number()) fail(path_ + "/" + key, "expected a number");
    const double x = v.get<double>();
    if (positive ? !(x > 0.0) : !(x >= 0.0)) {
      fail(path_ + "/" + key, positive ? "must be > 0" : "must be >= 0");
    }
    return x;
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) fail(path_ + "/" + key, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_string()) fail(path_ + "/" + key, "expected a string");
    return v.get<std::string>();
  }

  template <typename T, typename F>
  std::vector<T> array(const char* key, std::vector<T> fallback, F&& convert) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    const std::string at = path_ + "/" + key;
    if (!v.is_array() || v.empty()) fail(at, "expected a non-empty array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert(v[i], at + "/" + std::to_string(i)));
    return out;
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& message) {
    throw SpecError(path + ": " + message);
  }

 private:
  std::string path_or_root() const { return path_.empty() ? "/" : path_; }

  const json& node_;
  std::string path_;
};

MergeKind parse_kind_at(const std::string& name, const std::string& path) {
  try {
    return parse_merge_kind(name);
  } catch (const ConfigError& e) {
    SpecReader::fail(path, e.what());
  }
}

TrainConfig parse_train(const SpecReader& r, TrainConfig fallback) {
  r.require_object({"steps", "lr"});
  fallback.steps = r.uint("steps", fallback.steps);
  fallback.lr = r.number("lr", fallback.lr, false);
  return fallback;
}

ojson eval_json(const EvalResult& e) {
  return ojson{{"loss", e.loss}, {"accuracy", e.accuracy}};
}

std::string fmt_fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace

std::string cross_track_key(MergeKind kind) {
  return "cross_track_" + std::string(to_string(kind));
}

ExperimentSpec parse_experiment_spec(const nlohmann::json& doc) {
  ExperimentSpec spec;
  SpecReader root(doc, "");
  root.require_object({"schema_version", "model", "seeds", "source_tasks", "tasks", "shots", "pretrain", "finetune",
                       "strategies", "cross_track", "track_merge", "solver", "probe"});
  if (!root.has("schema_version")) SpecReader::fail("/schema_version", "missing");
  if (root.uint("schema_version", 0) != static_cast<std::uint64_t>(kExperimentSchemaVersion)) {
    SpecReader::fail("/schema_version", "unsupported version (expected 1)");
  }

  if (root.has("model")) {
    const SpecReader m = root.child("model");
    m.require_object({"d", "r", "layers", "nonlinearity"});
    spec.model.d = m.uint("d", spec.model.d, 1);
    spec.model.r = m.uint("r", spec.model.r, 1);
    spec.model.layers = m.uint("layers", spec.model.layers, 1);
    const std::string nl = m.string("nonlinearity", std::string(to_string(spec.model.nonlinearity)));
    try {
      spec.model.nonlinearity = parse_nonlinearity(nl);
    } catch (const ConfigError& e) {
      SpecReader::fail("/model/nonlinearity", e.what());
    }
    if (spec.model.d % spec.model.r != 0) SpecReader::fail("/model/r", "must divide d");
  }

  spec.seeds = root.array<std::uint64_t>("seeds", spec.seeds, [](const json& v, const std::string& at) {
    if (!is_count(v)) SpecReader::fail(at, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  });
  {
    std::set<std::uint64_t> unique(spec.seeds.begin(), spec.seeds.end());
    if (unique.size() != spec.seeds.size()) SpecReader::fail("/seeds", "seeds must be distinct");
  }
  spec.n_source_tasks = root.uint("source_tasks", spec.n_source_tasks, 2);

  if (root.has("tasks")) {
    const SpecReader t = root.child("tasks");
    t.require_object({"train_samples", "test_samples", "perturbation_scale"});
    spec.track.train_samples = t.uint("train_samples", spec.track.train_samples, 2);
    spec.track.test_samples = t.uint("test_samples", spec.track.test_samples, 1);
    spec.track.perturbation_scale = t.number("perturbation_scale", spec.track.perturbation_scale, false);
  }

  spec.shots = root.array<std::size_t>("shots", spec.shots, [](const json& v, const std::string& at) {
    if (!is_count(v) || v.get<std::uint64_t>() == 0) SpecReader::fail(at, "expected a positive integer");
    return static_cast<std::size_t>(v.get<std::uint64_t>());
  });
  for (std::size_t i = 0; i < spec.shots.size(); ++i) {
    if (2 * spec.shots[i] > spec.track.train_samples) {
      SpecReader::fail("/shots/" + std::to_string(i), "exceeds what the training split can supply");
    }
  }

  if (root.has("pretrain")) spec.pretrain = parse_train(root.child("pretrain"), spec.pretrain);
  if (root.has("finetune")) spec.finetune = parse_train(root.child("finetune"), spec.finetune);

  spec.strategies = root.array<MergeKind>("strategies", spec.strategies, [](const json& v, const std::string& at) {
    if (!v.is_string()) SpecReader::fail(at, "expected a method name");
    return parse_kind_at(v.get<std::string>(), at);
  });
  spec.cross_track = root.boolean("cross_track", spec.cross_track);
  if (root.has("track_merge")) {
    spec.track_merge = parse_kind_at(root.string("track_merge", ""), "/track_merge");
  }

  if (root.has("solver")) {
    const SpecReader s = root.child("solver");
    s.require_object({"kind", "epsilon", "max_iters", "tol"});
    const std::string kind = s.string("kind", "exact");
    if (kind == "exact") {
      spec.solver.kind = SolverKind::exact;
    } else if (kind == "sinkhorn") {
      spec.solver.kind = SolverKind::sinkhorn;
    } else {
      SpecReader::fail("/solver/kind", "expected exact or sinkhorn");
    }
    spec.solver.sinkhorn.epsilon = s.number("epsilon", spec.solver.sinkhorn.epsilon, false);
    spec.solver.sinkhorn.max_iters = s.uint("max_iters", spec.solver.sinkhorn.max_iters, 1);
    spec.solver.sinkhorn.tol = s.number("tol", spec.solver.sinkhorn.tol, true);
  }

  if (root.has("probe")) {
    const SpecReader p = root.child("probe");
    p.require_object({"source", "samples"});
    const std::string src = p.string("source", "backbone");
    if (src == "backbone") {
      spec.probe_source = ProbeSource::backbone;
    } else if (src == "gaussian") {
      spec.probe_source = ProbeSource::gaussian;
    } else {
      SpecReader::fail("/probe/source", "expected backbone or gaussian");
    }
    spec.probe_samples = p.uint("samples", spec.probe_samples, 1);
  }
  return spec;
}

nlohmann::ordered_json spec_to_json(const ExperimentSpec& spec) {
  ojson j;
  j["schema_version"] = kExperimentSchemaVersion;
  j["model"] = ojson{{"d", spec.model.d},
                     {"r", spec.model.r},
                     {"layers", spec.model.layers},
                     {"nonlinearity", std::string(to_string(spec.model.nonlinearity))}};
  j["seeds"] = spec.seeds;
  j["source_tasks"] = spec.n_source_tasks;
  j["tasks"] = ojson{{"train_samples", spec.track.train_samples},
                     {"test_samples", spec.track.test_samples},
                     {"perturbation_scale", spec.track.perturbation_scale}};
  j["shots"] = spec.shots;
  j["pretrain"] = ojson{{"steps", spec.pretrain.steps}, {"lr", spec.pretrain.lr}};
  j["finetune"] = ojson{{"steps", spec.finetune.steps}, {"lr", spec.finetune.lr}};
  ojson strategies = ojson::array();
  for (auto k : spec.strategies) strategies.push_back(std::string(to_string(k)));
  j["strategies"] = std::move(strategies);
  j["cross_track"] = spec.cross_track;
  j["track_merge"] = std::string(to_string(spec.track_merge));
  ojson solver{{"kind", std::string(to_string(spec.solver.kind))}};
  if (spec.solver.kind == SolverKind::sinkhorn) {
    solver["epsilon"] = spec.solver.sinkhorn.epsilon;
    solver["max_iters"] = spec.solver.sinkhorn.max_iters;
    solver["tol"] = spec.solver.sinkhorn.tol;
  }
  j["solver"] = std::move(solver);
  j["probe"] = ojson{{"source", spec.probe_source == ProbeSource::backbone ? "backbone" : "gaussian"},
                     {"samples", spec.probe_samples}};
  return j;
}

const MethodScores* SeedResult::find(const std::string& name) const {
  for (const auto& [key, scores] : methods) {
    if (key == name) return &scores;
  }
  return nullptr;
}

namespace {

// Stream ids for derive_seed, one per randomness consumer in a seed's run.
enum Stream : std::uint64_t {
  kBackboneStream = 1,
  kTargetTrackStream = 2,
  kOtherTrackStream = 3,
  kProbeStream = 4,
  kRandomInitStream = 5,
  kSourceInitBase = 100,
  kCrossInitBase = 200,
};

MethodScores score(const ExperimentSpec& spec, const Backbone& backbone, const SyntheticTask& target,
                   const AdapterStack& init) {
  MethodScores s;
  s.zero_shot = eval_zero_shot(target, backbone, init);
  double total = 0.0;
  for (std::size_t k : spec.shots) {
    Matrix x;
    Vector y;
    few_shot_split(target, k, x, y);
    const TrainResult tuned = train_adapter(backbone, init, x, y, spec.finetune);
    const EvalResult e = eval_zero_shot(target, backbone, tuned.stack);
    total += e.loss;
    s.few_shot.push_back(e);
  }
  s.mean_few_shot_loss = total / static_cast<double>(spec.shots.size());
  return s;
}

std::vector<AdapterStack> pretrain_sources(const ExperimentSpec& spec, const Backbone& backbone,
                                           const std::vector<SyntheticTask>& tasks, std::size_t count,
                                           std::uint64_t seed, std::uint64_t init_base) {
  std::vector<AdapterStack> out;
  for (std::size_t k = 0; k < count; ++k) {
    AdapterStack init = gen_adapter(spec.model, derive_seed(seed, init_base + k));
    AdapterStack trained = train_adapter(tasks[k], backbone, init, spec.pretrain).stack;
    trained.metadata.name = tasks[k].task_id;
    trained.metadata.track = tasks[k].track_id;
    trained.metadata.source_task = tasks[k].task_id;
    out.push_back(std::move(trained));
  }
  return out;
}

}  // namespace

SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  spec.model.validate();
  const std::size_t n_src = spec.n_source_tasks;
  const Backbone backbone = gen_backbone(spec.model.d, spec.model.layers, derive_seed(seed, kBackboneStream));

  // Tasks 0..n_src-1 are the sources; task n_src is the target.
  const auto same_track =
      gen_track("target", n_src + 1, spec.model.d, derive_seed(seed, kTargetTrackStream), spec.track, &backbone);
  const SyntheticTask& target = same_track.back();
  const auto sources = pretrain_sources(spec, backbone, same_track, n_src, seed, kSourceInitBase);

  ProbeBatch probe;
  if (spec.probe_source == ProbeSource::backbone) {
    Rng rng(derive_seed(seed, kProbeStream));
    Matrix x(spec.probe_samples, spec.model.d);
    for (double& v : x.data()) v = rng.gaussian();
    probe = backbone_probe(backbone, x);
  } else {
    probe = gen_probe(spec.model.d, spec.probe_samples, spec.model.layers, derive_seed(seed, kProbeStream));
  }

  MergeStrategy strategy;
  strategy.solver = spec.solver;

  SeedResult result;
  result.seed = seed;
  const AdapterStack random_init = gen_adapter(spec.model, derive_seed(seed, kRandomInitStream));
  result.methods.emplace_back("random", score(spec, backbone, target, random_init));
  result.methods.emplace_back("single", score(spec, backbone, target, sources.front()));

  std::vector<MergeKind> kinds = spec.strategies;
  if (std::find(kinds.begin(), kinds.end(), spec.track_merge) == kinds.end()) kinds.push_back(spec.track_merge);
  for (MergeKind kind : kinds) {
    strategy.kind = kind;
    const AdapterStack merged = merge(sources, strategy, &probe).merged;
    result.methods.emplace_back(std::string(to_string(kind)), score(spec, backbone, target, merged));
  }

  if (spec.cross_track) {
    const auto other_track =
        gen_track("other", n_src, spec.model.d, derive_seed(seed, kOtherTrackStream), spec.track, &backbone);
    const auto cross_sources = pretrain_sources(spec, backbone, other_track, n_src, seed, kCrossInitBase);
    strategy.kind = spec.track_merge;
    const AdapterStack merged = merge(cross_sources, strategy, &probe).merged;
    result.methods.emplace_back(cross_track_key(spec.track_merge), score(spec, backbone, target, merged));
  }
  return result;
}

ExperimentResult run_directional_experiment(const ExperimentSpec& spec) {
  ExperimentResult result;
  std::vector<std::uint64_t> seeds = spec.seeds;
  std::sort(seeds.begin(), seeds.end());
  for (std::uint64_t s : seeds) result.seeds.push_back(run_seed(spec, s));

  const std::string track_name(to_string(spec.track_merge));
  std::vector<Comparison> wanted{
      {"acts_le_avg_few_shot", "acts", "avg", false, false},
      {"avg_le_random_few_shot", "avg", "random", false, false},
      {"same_track_lt_cross_track_few_shot", track_name, cross_track_key(spec.track_merge), false, true},
      {"merged_lt_random_zero_shot", track_name, "random", true, true},
  };
  for (Comparison c : wanted) {
    bool present = true;
    for (const auto& sr : result.seeds) {
      const MethodScores* b = sr.find(c.better);
      const MethodScores* w = sr.find(c.worse);
      if (b == nullptr || w == nullptr) {
        present = false;
        break;
      }
      const double lb = c.zero_shot ? b->zero_shot.loss : b->mean_few_shot_loss;
      const double lw = c.zero_shot ? w->zero_shot.loss : w->mean_few_shot_loss;
      if (c.strict ? lb < lw : lb <= lw) ++c.wins;
      ++c.of;
    }
    if (present) result.comparisons.push_back(c);
  }
  return result;
}

nlohmann::ordered_json ExperimentResult::per_seed_json() const {
  ojson arr = ojson::array();
  for (const auto& sr : seeds) {
    ojson methods;
    for (const auto& [name, s] : sr.methods) {
      ojson m;
      m["zero_shot"] = eval_json(s.zero_shot);
      ojson few = ojson::array();
      for (const auto& e : s.few_shot) few.push_back(eval_json(e));
      m["few_shot"] = std::move(few);
      m["mean_few_shot_loss"] = s.mean_few_shot_loss;
      methods[name] = std::move(m);
    }
    arr.push_back(ojson{{"seed", sr.seed}, {"methods", std::move(methods)}});
  }
  return arr;
}

nlohmann::ordered_json ExperimentResult::aggregate_json() const {
  ojson j;
  j["n_seeds"] = seeds.size();
  ojson means;
  if (!seeds.empty()) {
    for (const auto& [name, unused] : seeds.front().methods) {
      double zl = 0.0, za = 0.0, fl = 0.0;
      for (const auto& sr : seeds) {
        const MethodScores* s = sr.find(name);
        zl += s->zero_shot.loss;
        za += s->zero_shot.accuracy;
        fl += s->mean_few_shot_loss;
      }
      const double n = static_cast<double>(seeds.size());
      means[name] = ojson{{"zero_shot_loss", zl / n}, {"zero_shot_accuracy", za / n}, {"mean_few_shot_loss", fl / n}};
    }
  }
  j["means"] = std::move(means);
  ojson comps;
  for (const auto& c : comparisons) {
    comps[c.name] = ojson{{"better", c.better},
                          {"worse", c.worse},
                          {"metric", c.zero_shot ? "zero_shot_loss" : "mean_few_shot_loss"},
                          {"relation", c.strict ? "<" : "<="},
                          {"wins", c.wins},
                          {"of", c.of}};
  }
  j["comparisons"] = std::move(comps);
  return j;
}

std::string ExperimentResult::summary_table() const {
  std::ostringstream out;
  out << "method                 zero-shot loss   zero-shot acc   few-shot loss\n";
  if (!seeds.empty()) {
    const double n = static_cast<double>(seeds.size());
    for (const auto& [name, unused] : seeds.front().methods) {
      double zl = 0.0, za = 0.0, fl = 0.0;
      for (const auto& sr : seeds) {
        const MethodScores* s = sr.find(name);
        zl += s->zero_shot.loss;
        za += s->zero_shot.accuracy;
        fl += s->mean_few_shot_loss;
      }
      std::string label = name;
      label.resize(std::max<std::size_t>(label.size(), 22), ' ');
      out << label << " " << fmt_fixed(zl / n) << "           " << fmt_fixed(za / n) << "          "
          << fmt_fixed(fl / n) << "\n";
    }
  }
  out << "\n";
  for (const auto& c : comparisons) {
    out << c.name << ": " << c.better << " " << (c.strict ? "<" : "<=") << " " << c.worse << " in " << c.wins << "/"
        << c.of << " seeds\n";
  }
  return out.str();
}

}  // namespace adaptmerge
