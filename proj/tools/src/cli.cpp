// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/cli.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/errors.hpp"
#include "adaptmerge/experiment.hpp"
#include "adaptmerge/merge.hpp"
#include "adaptmerge/store.hpp"
#include "adaptmerge/synth.hpp"

namespace adaptmerge::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct MergeArgs {
  std::vector<std::string> inputs;
  std::string method;
  std::string solver = "exact";
  double epsilon = 0.0;
  bool epsilon_set = false;
  bool include_bias = false;
  std::string probe;
  std::string same_track;
  std::string out;
  std::string report;
};

struct GenArgs {
  std::size_t d = 0;
  std::size_t r = 1;
  std::size_t layers = 1;
  std::uint64_t seed = 0;
  std::string nonlinearity = "relu";
  std::string track;
  std::string name;
  std::string source_task;
  std::size_t n = 256;
  std::size_t n_tasks = 4;
  std::size_t train = 512;
  std::size_t test = 1024;
  double perturbation = 0.1;
  std::size_t backbone_layers = 0;
  std::string out;
};

struct ParamsArgs {
  std::size_t d = 0;
  std::size_t r = 1;
  std::size_t layers = 1;
  std::size_t n_adapters = 1;
  bool include_bias = false;
};

struct ExperimentArgs {
  std::string spec;
  std::string out;
};

template <typename F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

bool same_file(const std::string& a, const std::string& b) {
  std::error_code ec;
  if (fs::exists(a, ec) && fs::exists(b, ec)) return fs::equivalent(a, b, ec);
  return fs::weakly_canonical(a, ec) == fs::weakly_canonical(b, ec);
}

int cmd_merge(const MergeArgs& a, std::ostream& out) {
  MergeStrategy strategy;
  strategy.kind = parse_merge_kind(a.method);
  strategy.include_bias_in_cost = a.include_bias;
  strategy.solver.kind = a.solver == "sinkhorn" ? SolverKind::sinkhorn : SolverKind::exact;
  if (a.epsilon_set) {
    if (strategy.solver.kind != SolverKind::sinkhorn) throw ConfigError("--epsilon applies only to --solver sinkhorn");
    strategy.solver.sinkhorn.epsilon = a.epsilon;
  }
  if (strategy.kind == MergeKind::ot_acts && a.probe.empty()) {
    throw ConfigError("--method acts requires --probe <file>");
  }
  if (strategy.kind != MergeKind::ot_acts && !a.probe.empty()) {
    throw ConfigError("--probe is only used by --method acts");
  }
  if (a.include_bias && strategy.kind != MergeKind::ot_wts) {
    throw ConfigError("--include-bias applies only to --method wts");
  }
  for (const auto& in : a.inputs) {
    if (same_file(in, a.out)) throw ConfigError("--out " + a.out + " would overwrite input " + in);
    if (!a.report.empty() && same_file(in, a.report)) {
      throw ConfigError("--report " + a.report + " would overwrite input " + in);
    }
  }

  std::vector<AdapterStack> stacks;
  std::vector<std::string> paths;
  for (const auto& in : a.inputs) {
    AdapterStack s = with_path(in, [&] { return read_adapter(in); });
    if (!a.same_track.empty() && s.metadata.track != a.same_track) continue;
    stacks.push_back(std::move(s));
    paths.push_back(in);
  }
  if (stacks.empty()) {
    throw EmptySelectionError("--same-track " + a.same_track + ": none of the " + std::to_string(a.inputs.size()) +
                              " inputs belongs to that track");
  }
  for (std::size_t j = 1; j < stacks.size(); ++j) {
    if (stacks[j].config != stacks[0].config) {
      throw ConfigError(paths[j] + ": " + describe(stacks[j].config) + " does not match anchor " + paths[0] + ": " +
                        describe(stacks[0].config));
    }
  }
  if (strategy.uses_transport() && stacks.size() < 2) {
    throw ConfigError("--method " + a.method + " needs at least 2 inputs, got " + std::to_string(stacks.size()) +
                      (a.same_track.empty() ? "" : " after --same-track"));
  }

  ProbeBatch probe;
  if (!a.probe.empty()) probe = with_path(a.probe, [&] { return read_probe(a.probe); });
  const MergeResult result = merge(stacks, strategy, a.probe.empty() ? nullptr : &probe);

  write_adapter(result.merged, a.out);
  if (!a.report.empty()) write_report(result.report, a.report);

  std::string how(to_string(strategy.kind));
  if (strategy.uses_transport()) how += "/" + std::string(to_string(strategy.solver.kind));
  out << fmt::format("merged {} adapter{} with {}: total transport cost {:.6g} -> {}\n", stacks.size(),
                     stacks.size() == 1 ? "" : "s", how, result.report.total_transport_cost(), a.out);
  return kExitOk;
}

AdapterConfig gen_config(const GenArgs& a) {
  AdapterConfig cfg{a.d, a.r, a.layers, parse_nonlinearity(a.nonlinearity)};
  cfg.validate();
  return cfg;
}

int cmd_gen_adapter(const GenArgs& a, std::ostream& out) {
  AdapterStack s = gen_adapter(gen_config(a), a.seed);
  if (!a.name.empty()) s.metadata.name = a.name;
  s.metadata.track = a.track;
  s.metadata.source_task = a.source_task;
  write_adapter(s, a.out);
  out << fmt::format("wrote adapter {} ({}) -> {}\n", s.metadata.name, describe(s.config), a.out);
  return kExitOk;
}

int cmd_gen_probe(const GenArgs& a, std::ostream& out) {
  if (a.d == 0) throw ConfigError("--d must be positive");
  if (a.n == 0) throw ConfigError("--n must be positive");
  const ProbeBatch p = gen_probe(a.d, a.n, a.layers, a.seed);
  write_probe(p, a.out);
  out << fmt::format("wrote probe n={} d={} layers={} -> {}\n", p.n, p.d, p.layers.size(), a.out);
  return kExitOk;
}

ojson matrix_json(const Matrix& m) {
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

int cmd_gen_tasks(const GenArgs& a, std::ostream& out) {
  if (a.d == 0) throw ConfigError("--d must be positive");
  if (a.n_tasks == 0) throw ConfigError("--n-tasks must be positive");
  const std::string track = a.track.empty() ? "track" : a.track;
  TrackOptions opts;
  opts.train_samples = a.train;
  opts.test_samples = a.test;
  opts.perturbation_scale = a.perturbation;

  Backbone backbone;
  if (a.backbone_layers > 0) backbone = gen_backbone(a.d, a.backbone_layers, derive_seed(a.seed, 1));
  const auto tasks =
      gen_track(track, a.n_tasks, a.d, derive_seed(a.seed, 2), opts, a.backbone_layers > 0 ? &backbone : nullptr);

  ojson doc;
  doc["track"] = track;
  doc["d"] = a.d;
  doc["seed"] = a.seed;
  if (a.backbone_layers > 0) {
    ojson blocks = ojson::array();
    for (const auto& b : backbone.blocks) blocks.push_back(matrix_json(b));
    doc["backbone"] = {{"blocks", std::move(blocks)}, {"head", backbone.head}};
  }
  ojson arr = ojson::array();
  for (const auto& t : tasks) {
    ojson j;
    j["task_id"] = t.task_id;
    j["rotation"] = matrix_json(t.rotation);
    j["perturbation"] = matrix_json(t.perturbation);
    j["label_rule"] = t.label_rule;
    j["center"] = t.center;
    j["train"] = {{"x", matrix_json(t.train_x)}, {"y", t.train_y}};
    j["test"] = {{"x", matrix_json(t.test_x)}, {"y", t.test_y}};
    arr.push_back(std::move(j));
  }
  doc["tasks"] = std::move(arr);
  write_text_file(a.out, doc.dump() + "\n");
  out << fmt::format("wrote {} tasks of track {} (d={}) -> {}\n", tasks.size(), track, a.d, a.out);
  return kExitOk;
}

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

struct Stats {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  double sq = 0.0;
  std::size_t count = 0;

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sq += v * v;
    ++count;
  }
  template <typename R>
  void add_all(const R& r) {
    for (double v : r) add(v);
  }
};

std::string stats_row(const std::string& name, const std::string& shape, const std::string& offset, const Stats& s) {
  return fmt::format("  {:<16} {:>9} {:>10} {:>12.5g} {:>12.5g} {:>12.5g}\n", name, shape, offset,
                     s.count ? s.lo : 0.0, s.count ? s.hi : 0.0, std::sqrt(s.sq));
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const Bytes bytes = read_file(path);
  const auto magic = [&](const char* m) { return bytes.size() >= 4 && std::equal(m, m + 4, bytes.begin()); };

  if (magic(kAdapterMagic)) {
    const AdapterHeader header = with_path(path, [&] { return decode_adapter_header(bytes); });
    out << "adapter container, format version " << kFormatVersion << "\n";
    out << "header:\n" << nlohmann::ordered_json::parse(header.json).dump(2) << "\n";
    const AdapterStack s = with_path(path, [&] { return decode_adapter(bytes); });
    out << "tensors:\n";
    out << fmt::format("  {:<16} {:>9} {:>10} {:>12} {:>12} {:>12}\n", "name", "shape", "offset", "min", "max",
                       "l2");
    std::size_t total = 0;
    std::size_t t = 0;
    for (const auto& layer : s.layers) {
      Stats st[4];
      st[0].add_all(layer.w_down.data());
      st[1].add_all(layer.b_down);
      st[2].add_all(layer.w_up.data());
      st[3].add_all(layer.b_up);
      for (const auto& x : st) {
        const TensorEntry& e = header.tensors[t++];
        out << stats_row(e.name, shape_string(e.shape), std::to_string(e.offset_bytes), x);
        total += x.count;
      }
    }
    out << fmt::format("finite: all {} values in {} tensors\n", total, header.tensors.size());
    return kExitOk;
  }

  if (magic(kProbeMagic)) {
    const ProbeBatch p = with_path(path, [&] { return decode_probe(bytes); });
    out << "probe container, format version " << kFormatVersion << "\n";
    out << fmt::format("n={} d={} layers={}\n", p.n, p.d, p.layers.size());
    out << fmt::format("  {:<16} {:>9} {:>10} {:>12} {:>12} {:>12}\n", "layer", "shape", "", "min", "max", "l2");
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      Stats st;
      st.add_all(p.layers[l].data());
      out << stats_row("layer" + std::to_string(l), shape_string({p.n, p.d}), "", st);
    }
    out << fmt::format("finite: all {} values\n", p.n * p.d * p.layers.size());
    return kExitOk;
  }

  throw FormatError(path + ": not an adapter or probe container (unrecognized magic)");
}

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  const AdapterConfig cfg{a.d, a.r, a.layers, Nonlinearity::relu};
  cfg.validate();
  if (a.n_adapters == 0) throw ConfigError("--n-adapters must be at least 1");
  const std::uint64_t L = a.layers;
  const std::uint64_t n = a.n_adapters;
  const std::uint64_t adapter = param_count(cfg, ParamKind::adapter, a.include_bias);
  const std::uint64_t composition = param_count(cfg, ParamKind::fusion_composition, a.include_bias);
  const std::uint64_t fusion = n * adapter + composition;

  out << fmt::format("d={} r={} m={} layers={} adapters={} bias={}\n", cfg.d, cfg.r, cfg.m(), L, n,
                     a.include_bias ? "included" : "excluded");
  out << fmt::format("{:<22} {:>14} {:>16}\n", "", "per layer", "total");
  const auto row = [&](std::string_view label, std::uint64_t per) {
    out << fmt::format("{:<22} {:>14} {:>16}\n", label, per, per * L);
  };
  row("single adapter", adapter);
  row("merged adapter", adapter);
  row("composition layer", composition);
  row("fusion (n + comp)", fusion);
  out << fmt::format("composition / adapter: {:.6g}\n", static_cast<double>(composition) / adapter);
  out << fmt::format("fusion / merged: {:.6g}\n", static_cast<double>(fusion) / adapter);
  return kExitOk;
}

int cmd_experiment(const ExperimentArgs& a, std::ostream& out) {
  const Bytes raw = read_file(a.spec);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(a.spec + ": invalid JSON at byte " + std::to_string(e.byte));
  }
  const ExperimentSpec spec = with_path(a.spec, [&] { return parse_experiment_spec(doc); });

  const ExperimentResult result = run_directional_experiment(spec);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Error("cannot create directory " + a.out + ": " + ec.message());
  const fs::path dir(a.out);
  write_text_file(dir / "per_seed.json", result.per_seed_json().dump(2) + "\n");
  write_text_file(dir / "aggregate.json", result.aggregate_json().dump(2) + "\n");
  const std::string table = result.summary_table();
  write_text_file(dir / "summary.txt", table);
  out << table;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merge, align and inspect bottleneck adapters.", "adaptmerge"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  MergeArgs ma;
  auto* merge_cmd = app.add_subcommand("merge", "Merge adapter files into one adapter. The first input is the anchor.");
  merge_cmd->add_option("inputs", ma.inputs, "Adapter files; the first is the alignment anchor")->required();
  merge_cmd->add_option("--method", ma.method, "sum, avg, wts or acts")
      ->required()
      ->check(CLI::IsMember({"sum", "avg", "wts", "acts"}));
  merge_cmd->add_option("--solver", ma.solver, "Transport solver for wts/acts")
      ->check(CLI::IsMember({"exact", "sinkhorn"}))
      ->capture_default_str();
  auto* eps_opt = merge_cmd->add_option("--epsilon", ma.epsilon, "Sinkhorn regularization (default 0.05 mean|C|)")
                      ->check(CLI::PositiveNumber);
  merge_cmd->add_flag("--include-bias", ma.include_bias, "Append b_down to each neuron's row in the wts cost");
  merge_cmd->add_option("--probe", ma.probe, "Probe file, required by --method acts");
  merge_cmd->add_option("--same-track", ma.same_track, "Merge only inputs whose track matches");
  merge_cmd->add_option("--out", ma.out, "Merged adapter file")->required();
  merge_cmd->add_option("--report", ma.report, "JSON merge report");

  GenArgs ga;
  auto* gen_cmd = app.add_subcommand("gen", "Generate deterministic fixtures");
  gen_cmd->require_subcommand(1);
  auto* gen_adapter_cmd = gen_cmd->add_subcommand("adapter", "Random adapter stack");
  gen_adapter_cmd->add_option("--d", ga.d, "Model dimension")->required();
  gen_adapter_cmd->add_option("--r", ga.r, "Reduction factor")->required();
  gen_adapter_cmd->add_option("--layers", ga.layers, "Adapter layers")->capture_default_str();
  gen_adapter_cmd->add_option("--seed", ga.seed, "RNG seed")->capture_default_str();
  gen_adapter_cmd->add_option("--nonlinearity", ga.nonlinearity, "relu, gelu or identity")->capture_default_str();
  gen_adapter_cmd->add_option("--track", ga.track, "Track label");
  gen_adapter_cmd->add_option("--name", ga.name, "Adapter name (default random-<seed>)");
  gen_adapter_cmd->add_option("--source-task", ga.source_task, "Source task label");
  gen_adapter_cmd->add_option("--out", ga.out, "Output file")->required();

  auto* gen_probe_cmd = gen_cmd->add_subcommand("probe", "Standard normal probe batch");
  gen_probe_cmd->add_option("--d", ga.d, "Model dimension")->required();
  gen_probe_cmd->add_option("--n", ga.n, "Samples per layer")->capture_default_str();
  gen_probe_cmd->add_option("--layers", ga.layers, "Layers")->capture_default_str();
  gen_probe_cmd->add_option("--seed", ga.seed, "RNG seed")->capture_default_str();
  gen_probe_cmd->add_option("--out", ga.out, "Output file")->required();

  auto* gen_tasks_cmd = gen_cmd->add_subcommand("tasks", "Synthetic task track as JSON");
  gen_tasks_cmd->add_option("--d", ga.d, "Input dimension")->required();
  gen_tasks_cmd->add_option("--n-tasks", ga.n_tasks, "Tasks in the track")->capture_default_str();
  gen_tasks_cmd->add_option("--track", ga.track, "Track name (default track)");
  gen_tasks_cmd->add_option("--seed", ga.seed, "RNG seed")->capture_default_str();
  gen_tasks_cmd->add_option("--train", ga.train, "Training samples per task")->capture_default_str();
  gen_tasks_cmd->add_option("--test", ga.test, "Test samples per task")->capture_default_str();
  gen_tasks_cmd->add_option("--perturbation", ga.perturbation, "Per-task perturbation scale")->capture_default_str();
  gen_tasks_cmd->add_option("--layers", ga.backbone_layers,
                            "Frozen backbone blocks the labels are defined through (0: input space)")
      ->capture_default_str();
  gen_tasks_cmd->add_option("--out", ga.out, "Output file")->required();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a container's header, tensors and finiteness");
  inspect_cmd->add_option("file", inspect_path, "Adapter or probe file")->required();

  ParamsArgs pa;
  auto* params_cmd = app.add_subcommand("params", "Parameter counts: single, merged and fusion");
  params_cmd->add_option("--d", pa.d, "Model dimension")->required();
  params_cmd->add_option("--r", pa.r, "Reduction factor")->required();
  params_cmd->add_option("--layers", pa.layers, "Adapter layers")->capture_default_str();
  params_cmd->add_option("--n-adapters", pa.n_adapters, "Adapters being combined")->capture_default_str();
  params_cmd->add_flag("--include-bias", pa.include_bias, "Count bias vectors too");

  ExperimentArgs ea;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a directional experiment spec");
  exp_cmd->add_option("--spec", ea.spec, "Experiment spec JSON")->required();
  exp_cmd->add_option("--out", ea.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return kExitUser;
  }

  try {
    if (merge_cmd->parsed()) {
      ma.epsilon_set = eps_opt->count() > 0;
      return cmd_merge(ma, out);
    }
    if (gen_adapter_cmd->parsed()) return cmd_gen_adapter(ga, out);
    if (gen_probe_cmd->parsed()) return cmd_gen_probe(ga, out);
    if (gen_tasks_cmd->parsed()) return cmd_gen_tasks(ga, out);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_path, out);
    if (params_cmd->parsed()) return cmd_params(pa, out);
    if (exp_cmd->parsed()) return cmd_experiment(ea, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  err << "internal error: no subcommand dispatched\n";
  return kExitInternal;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace adaptmerge::cli
