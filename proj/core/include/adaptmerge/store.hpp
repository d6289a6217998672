// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adaptmerge/adapter.hpp"
#include "adaptmerge/align.hpp"
#include "adaptmerge/merge.hpp"

namespace adaptmerge {

// Adapter container layout (all integers little-endian):
//   "ADPT" | u32 version = 1 | u64 header length | header JSON | payload
// The header keys are written in the order d, r, layers, nonlinearity, name,
// track, source_task, tensors. Each tensor entry is {name, shape,
// offset_bytes}; offsets are relative to the payload start. Payload values
// are binary32, row-major, in header order, four tensors per layer named
// layer{l}/w_down, layer{l}/b_down, layer{l}/w_up, layer{l}/b_up.
inline constexpr char kAdapterMagic[4] = {'A', 'D', 'P', 'T'};
inline constexpr char kProbeMagic[4] = {'P', 'R', 'O', 'B'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

using Bytes = std::vector<std::uint8_t>;

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset_bytes = 0;

  std::uint64_t element_count() const;
};

struct AdapterHeader {
  AdapterConfig config;
  AdapterMetadata metadata;
  std::vector<TensorEntry> tensors;
  std::string json;                 // header text as stored
  std::uint64_t payload_offset = 0;  // from the start of the file
};

// Checks magic, version and header consistency. Does not touch the payload.
AdapterHeader decode_adapter_header(std::span<const std::uint8_t> bytes);

Bytes encode_adapter(const AdapterStack& stack);
AdapterStack decode_adapter(std::span<const std::uint8_t> bytes);

void write_adapter(const AdapterStack& stack, const std::filesystem::path& path);
AdapterStack read_adapter(const std::filesystem::path& path);

// Probe container: "PROB" | u32 version | u64 n | u64 d | u64 layer_count |
// layer_count blocks of n x d binary32.
Bytes encode_probe(const ProbeBatch& probe);
ProbeBatch decode_probe(std::span<const std::uint8_t> bytes);

void write_probe(const ProbeBatch& probe, const std::filesystem::path& path);
ProbeBatch read_probe(const std::filesystem::path& path);

// Rounds every value through binary32, matching what a write/read round
// trip produces.
AdapterStack quantize_to_storage(const AdapterStack& stack);
ProbeBatch quantize_to_storage(const ProbeBatch& probe);

nlohmann::ordered_json report_to_json(const MergeReport& report);
void write_report(const MergeReport& report, const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames over `path`.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace adaptmerge
