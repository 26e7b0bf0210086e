// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. parse() and run() are kept apart from main() so
// tests can drive them directly.

#ifndef COLDPACK_TOOLS_CLI_HPP
#define COLDPACK_TOOLS_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace coldpack::cli {

inline constexpr int kSchemaVersion = 1;

enum class Subcommand {
  kQuantize,
  kInspect,
  kUnpackVerify,
  kSimulate,
  kColdstart,
  kGenModel,
};

struct Command {
  Subcommand subcommand = Subcommand::kInspect;
  std::string input;      // archive (quantize) or EFPK
  std::string output;     // EFPK written by quantize / gen-model
  std::string report;     // report destination; stdout when empty
  std::string config;     // JSON config path
  std::string calib;      // calibration archive (quantize)
  std::string scenario;   // scenario JSON (simulate, coldstart)
  std::string policy;     // policy name; empty = subcommand default
  std::string trace_csv;  // timeline CSV destination
  std::string archive_out;  // gen-model source archive
  std::uint64_t seed = 0;

  std::optional<double> avg_bits;
  std::optional<int> register_width;
  bool smoothing = false;

  std::optional<std::string> mode;
  std::optional<std::uint32_t> prompt_length, chunk_length;
  std::optional<std::uint32_t> loaders, unpackers;
  std::optional<double> load_cost, unpack_cost, compute_cost;
  bool verify = false;

  std::uint32_t layers = 2, rows = 256, cols = 256, tensors = 4;
  std::string dtype = "f32";

  // Set when --help was requested; run() is not meaningful then.
  std::optional<std::string> help;
};

// Throws Error(kUsage) naming the offending flag or subcommand.
Command parse(const std::vector<std::string>& args);

struct Outcome {
  int exit_code = 0;
  nlohmann::json report;
};

// Never throws; failures become {"error": {...}} with a nonzero exit code.
Outcome run(const Command& command);

nlohmann::json error_report(int code, const std::string& name, const std::string& message);

// Full driver: parse, run, write the report. Returns the process exit code.
int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace coldpack::cli

#endif  // COLDPACK_TOOLS_CLI_HPP
