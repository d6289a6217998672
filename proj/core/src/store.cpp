// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include "adaptmerge/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string_view>

#include "adaptmerge/errors.hpp"

namespace adaptmerge {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::size_t kAdapterPreamble = 4 + 4 + 8;
constexpr std::size_t kProbePreamble = 4 + 4 + 8 + 8 + 8;

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

void put_f32(Bytes& out, double x, const std::string& tensor) {
  const float f = static_cast<float>(x);
  if (!std::isfinite(f)) throw ValidationError("tensor " + tensor + " has a value not representable as binary32");
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

double get_f32(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in, at)));
}

void put_values(Bytes& out, std::span<const double> values, const std::string& tensor) {
  for (double x : values) put_f32(out, x, tensor);
}

// Reads `count` binary32 values; a non-finite value is reported against `tensor`.
void get_values(std::span<const std::uint8_t> in, std::size_t at, std::span<double> dst, const std::string& tensor) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = get_f32(in, at + 4 * i);
    if (!std::isfinite(dst[i])) {
      throw ValidationError("tensor " + tensor + " has a non-finite value at element " + std::to_string(i));
    }
  }
}

bool has_magic(std::span<const std::uint8_t> bytes, const char (&magic)[4]) {
  return bytes.size() >= 4 && std::memcmp(bytes.data(), magic, 4) == 0;
}

std::string tensor_name(std::size_t layer, std::string_view part) {
  return "layer" + std::to_string(layer) + "/" + std::string(part);
}

struct ExpectedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
};

std::vector<ExpectedTensor> expected_tensors(const AdapterConfig& cfg) {
  const std::uint64_t d = cfg.d;
  const std::uint64_t m = cfg.m();
  std::vector<ExpectedTensor> out;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    out.push_back({tensor_name(l, "w_down"), {m, d}});
    out.push_back({tensor_name(l, "b_down"), {m}});
    out.push_back({tensor_name(l, "w_up"), {d, m}});
    out.push_back({tensor_name(l, "b_up"), {d}});
  }
  return out;
}

std::string shape_str(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::uint64_t require_uint(const ojson& obj, const char* key) {
  if (!obj.contains(key)) throw ValidationError(std::string("header is missing '") + key + "'");
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned()) throw ValidationError(std::string("header field '") + key + "' must be an unsigned integer");
  return v.get<std::uint64_t>();
}

std::string require_string(const ojson& obj, const char* key) {
  if (!obj.contains(key)) throw ValidationError(std::string("header is missing '") + key + "'");
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ValidationError(std::string("header field '") + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

std::uint64_t TensorEntry::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t s : shape) n *= s;
  return n;
}

Bytes encode_adapter(const AdapterStack& stack) {
  stack.validate();
  const AdapterConfig& cfg = stack.config;

  ojson header;
  header["d"] = cfg.d;
  header["r"] = cfg.r;
  header["layers"] = cfg.layers;
  header["nonlinearity"] = std::string(to_string(cfg.nonlinearity));
  header["name"] = stack.metadata.name;
  header["track"] = stack.metadata.track;
  header["source_task"] = stack.metadata.source_task;
  ojson tensors = ojson::array();
  std::uint64_t offset = 0;
  for (const auto& t : expected_tensors(cfg)) {
    ojson entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["offset_bytes"] = offset;
    tensors.push_back(std::move(entry));
    std::uint64_t count = 1;
    for (auto s : t.shape) count *= s;
    offset += 4 * count;
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  Bytes out;
  out.reserve(kAdapterPreamble + text.size() + offset);
  out.insert(out.end(), std::begin(kAdapterMagic), std::end(kAdapterMagic));
  put_u32(out, kFormatVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const AdapterLayer& layer = stack.layers[l];
    put_values(out, layer.w_down.data(), tensor_name(l, "w_down"));
    put_values(out, layer.b_down, tensor_name(l, "b_down"));
    put_values(out, layer.w_up.data(), tensor_name(l, "w_up"));
    put_values(out, layer.b_up, tensor_name(l, "b_up"));
  }
  return out;
}

AdapterHeader decode_adapter_header(std::span<const std::uint8_t> bytes) {
  if (!has_magic(bytes, kAdapterMagic)) throw FormatError("not an adapter container (bad magic)");
  if (bytes.size() < kAdapterPreamble) throw CorruptionError("adapter container truncated inside the preamble");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion) {
    throw FormatError("unsupported adapter container version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - kAdapterPreamble) {
    throw CorruptionError("adapter container truncated inside the header");
  }

  AdapterHeader h;
  h.json.assign(reinterpret_cast<const char*>(bytes.data() + kAdapterPreamble), header_len);
  h.payload_offset = kAdapterPreamble + header_len;

  ojson header;
  try {
    header = ojson::parse(h.json);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw ValidationError("header must be a JSON object");

  h.config.d = require_uint(header, "d");
  h.config.r = require_uint(header, "r");
  h.config.layers = require_uint(header, "layers");
  if (h.config.d > (std::uint64_t{1} << 24) || h.config.layers > (std::uint64_t{1} << 16)) {
    throw ValidationError("header dimensions are implausibly large");
  }
  try {
    h.config.nonlinearity = parse_nonlinearity(require_string(header, "nonlinearity"));
    h.config.validate();
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("header: ") + e.what());
  }
  h.metadata.name = require_string(header, "name");
  h.metadata.track = require_string(header, "track");
  h.metadata.source_task = require_string(header, "source_task");

  if (!header.contains("tensors") || !header.at("tensors").is_array()) {
    throw ValidationError("header field 'tensors' must be an array");
  }
  const auto expected = expected_tensors(h.config);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != expected.size()) {
    throw ValidationError("header lists " + std::to_string(tensors.size()) + " tensors, " +
                          std::to_string(h.config.layers) + " layers need " + std::to_string(expected.size()));
  }
  std::uint64_t next_offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = tensors[i];
    if (!t.is_object()) throw ValidationError("tensor entry " + std::to_string(i) + " must be an object");
    TensorEntry e;
    e.name = require_string(t, "name");
    if (e.name != expected[i].name) {
      throw ValidationError("tensor entry " + std::to_string(i) + " is '" + e.name + "', expected '" +
                            expected[i].name + "'");
    }
    if (!t.contains("shape") || !t.at("shape").is_array()) {
      throw ValidationError("tensor " + e.name + " has no shape array");
    }
    for (const auto& s : t.at("shape")) {
      if (!s.is_number_unsigned()) throw ValidationError("tensor " + e.name + " has a non-integer dimension");
      e.shape.push_back(s.get<std::uint64_t>());
    }
    if (e.shape != expected[i].shape) {
      throw ValidationError("tensor " + e.name + " has shape " + shape_str(e.shape) + ", " + describe(h.config) +
                            " requires " + shape_str(expected[i].shape));
    }
    e.offset_bytes = require_uint(t, "offset_bytes");
    if (e.offset_bytes != next_offset) {
      throw ValidationError("tensor " + e.name + " has offset " + std::to_string(e.offset_bytes) + ", expected " +
                            std::to_string(next_offset) + " (tensors must be contiguous and in order)");
    }
    next_offset += 4 * e.element_count();
    h.tensors.push_back(std::move(e));
  }
  return h;
}

AdapterStack decode_adapter(std::span<const std::uint8_t> bytes) {
  AdapterHeader h = decode_adapter_header(bytes);
  const std::uint64_t available = bytes.size() - h.payload_offset;
  for (const auto& t : h.tensors) {
    if (t.offset_bytes + 4 * t.element_count() > available) {
      throw CorruptionError("payload truncated: tensor " + t.name + " needs bytes [" + std::to_string(t.offset_bytes) +
                            ", " + std::to_string(t.offset_bytes + 4 * t.element_count()) + ") but payload has " +
                            std::to_string(available));
    }
  }
  const auto& last = h.tensors.back();
  const std::uint64_t expected = last.offset_bytes + 4 * last.element_count();
  if (available != expected) {
    throw CorruptionError("payload has " + std::to_string(available - expected) + " trailing bytes");
  }

  AdapterStack stack;
  stack.config = h.config;
  stack.metadata = h.metadata;
  stack.layers.assign(h.config.layers, AdapterLayer::zeros(h.config));
  for (std::size_t i = 0; i < h.tensors.size(); ++i) {
    const auto& t = h.tensors[i];
    AdapterLayer& layer = stack.layers[i / 4];
    std::span<double> dst;
    switch (i % 4) {
      case 0:
        dst = layer.w_down.data();
        break;
      case 1:
        dst = layer.b_down;
        break;
      case 2:
        dst = layer.w_up.data();
        break;
      default:
        dst = layer.b_up;
        break;
    }
    get_values(bytes, h.payload_offset + t.offset_bytes, dst, t.name);
  }
  return stack;
}

Bytes encode_probe(const ProbeBatch& probe) {
  probe.validate();
  Bytes out;
  out.reserve(kProbePreamble + 4 * probe.n * probe.d * probe.layers.size());
  out.insert(out.end(), std::begin(kProbeMagic), std::end(kProbeMagic));
  put_u32(out, kFormatVersion);
  put_u64(out, probe.n);
  put_u64(out, probe.d);
  put_u64(out, probe.layers.size());
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    put_values(out, probe.layers[l].data(), "probe layer " + std::to_string(l));
  }
  return out;
}

ProbeBatch decode_probe(std::span<const std::uint8_t> bytes) {
  if (!has_magic(bytes, kProbeMagic)) throw FormatError("not a probe container (bad magic)");
  if (bytes.size() < 8) throw CorruptionError("probe container truncated inside the preamble");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion) throw FormatError("unsupported probe container version " + std::to_string(version));
  if (bytes.size() < kProbePreamble) throw CorruptionError("probe container truncated inside the preamble");
  ProbeBatch probe;
  probe.n = get_u64(bytes, 8);
  probe.d = get_u64(bytes, 16);
  const std::uint64_t layer_count = get_u64(bytes, 24);
  if (probe.n == 0) throw ValidationError("probe batch is empty (n = 0)");
  if (probe.d == 0) throw ValidationError("probe batch has d = 0");
  if (layer_count == 0) throw ValidationError("probe batch has no layers");
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max() / 4;
  if (probe.n > kMax / probe.d || probe.n * probe.d > kMax / layer_count) {
    throw ValidationError("probe dimensions overflow");
  }
  const std::uint64_t block = probe.n * probe.d;
  const std::uint64_t available = bytes.size() - kProbePreamble;
  if (available != 4 * block * layer_count) {
    throw CorruptionError("probe payload has " + std::to_string(available) + " bytes, header implies " +
                          std::to_string(4 * block * layer_count));
  }
  for (std::uint64_t l = 0; l < layer_count; ++l) {
    Matrix m(probe.n, probe.d);
    get_values(bytes, kProbePreamble + 4 * block * l, m.data(), "probe layer " + std::to_string(l));
    probe.layers.push_back(std::move(m));
  }
  return probe;
}

AdapterStack quantize_to_storage(const AdapterStack& stack) {
  AdapterStack out = stack;
  auto q = [](std::span<double> xs) {
    for (double& x : xs) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& layer : out.layers) {
    q(layer.w_down.data());
    q(layer.b_down);
    q(layer.w_up.data());
    q(layer.b_up);
  }
  return out;
}

ProbeBatch quantize_to_storage(const ProbeBatch& probe) {
  ProbeBatch out = probe;
  for (auto& m : out.layers)
    for (double& x : m.data()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void write_adapter(const AdapterStack& stack, const std::filesystem::path& path) {
  write_file(path, encode_adapter(stack));
}

AdapterStack read_adapter(const std::filesystem::path& path) {
  return decode_adapter(read_file(path));
}

void write_probe(const ProbeBatch& probe, const std::filesystem::path& path) {
  write_file(path, encode_probe(probe));
}

ProbeBatch read_probe(const std::filesystem::path& path) {
  return decode_probe(read_file(path));
}

nlohmann::ordered_json report_to_json(const MergeReport& report) {
  ojson j;
  j["schema"] = "adaptmerge.merge_report";
  j["schema_version"] = kReportSchemaVersion;
  ojson strategy;
  strategy["method"] = std::string(to_string(report.strategy.kind));
  if (report.strategy.uses_transport()) {
    strategy["solver"] = std::string(to_string(report.strategy.solver.kind));
    if (report.strategy.solver.kind == SolverKind::sinkhorn) {
      const double eps = report.strategy.solver.sinkhorn.epsilon;
      strategy["epsilon"] = eps > 0.0 ? ojson(eps) : ojson("default");
    }
    strategy["include_bias_in_cost"] = report.strategy.include_bias_in_cost;
  }
  j["strategy"] = std::move(strategy);
  j["n_inputs"] = report.n_inputs;
  if (!report.anchor.empty()) j["anchor"] = report.anchor;
  ojson inputs = ojson::array();
  for (const auto& in : report.inputs) {
    inputs.push_back(ojson{{"name", in.name}, {"track", in.track}, {"source_task", in.source_task}});
  }
  j["inputs"] = std::move(inputs);

  if (report.strategy.uses_transport()) {
    ojson transport;
    ojson per_input = ojson::array();
    for (std::size_t k = 0; k < report.transport.size(); ++k) {
      ojson entry;
      entry["name"] = k + 1 < report.inputs.size() ? report.inputs[k + 1].name : "";
      ojson costs = ojson::array();
      ojson converged = ojson::array();
      for (const auto& lt : report.transport[k]) {
        costs.push_back(lt.plan.cost);
        converged.push_back(lt.plan.converged);
      }
      entry["layer_costs"] = std::move(costs);
      entry["converged"] = std::move(converged);
      per_input.push_back(std::move(entry));
    }
    transport["per_input"] = std::move(per_input);
    transport["per_layer_cost"] = report.per_layer_transport_cost();
    transport["total_cost"] = report.total_transport_cost();
    j["transport"] = std::move(transport);
  }

  ojson params;
  params["adapter_per_layer"] = report.params.adapter_per_layer;
  params["composition_per_layer"] = report.params.composition_per_layer;
  params["merged_total"] = report.params.merged_total;
  params["fusion_total"] = report.params.fusion_total;
  j["params"] = std::move(params);
  return j;
}

void write_report(const MergeReport& report, const std::filesystem::path& path) {
  write_text_file(path, report_to_json(report).dump(2) + "\n");
}

}  // namespace adaptmerge
