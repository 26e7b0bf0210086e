// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "coldpack/coldstart.hpp"
#include "coldpack/error.hpp"
#include "coldpack/pack.hpp"
#include "coldpack/pipeline.hpp"
#include "coldpack/quant.hpp"
#include "coldpack/tensorstore.hpp"

namespace coldpack::cli {
namespace {

std::string_view subcommand_name(Subcommand s) {
  switch (s) {
    case Subcommand::kQuantize: return "quantize";
    case Subcommand::kInspect: return "inspect";
    case Subcommand::kUnpackVerify: return "unpack-verify";
    case Subcommand::kSimulate: return "simulate";
    case Subcommand::kColdstart: return "coldstart";
    case Subcommand::kGenModel: return "gen-model";
  }
  return "unknown";
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed for " + path);
}

pipeline::SchedPolicy policy_or(const std::string& name, pipeline::SchedPolicy fallback) {
  if (name.empty()) return fallback;
  const auto p = pipeline::policy_from_name(name);
  if (!p) fail(ErrorCode::kUsage, "--policy: unknown policy '" + name + "'");
  return *p;
}

nlohmann::json base_report(const Command& c) {
  return {{"schema_version", kSchemaVersion}, {"command", subcommand_name(c.subcommand)}};
}

nlohmann::json run_quantize(const Command& c) {
  quant::QuantConfig config;
  if (!c.config.empty()) config = quant::quant_config_from_json(load_json(c.config));
  if (c.avg_bits) config.avg_bits = *c.avg_bits;
  if (c.register_width) config.register_width = *c.register_width;
  if (c.smoothing) config.smoothing = true;
  config.validate();

  const TensorArchive archive = read_tensor_archive(c.input);
  std::unique_ptr<quant::CalibrationSet> calib;
  if (!c.calib.empty()) {
    calib = std::make_unique<quant::CalibrationSet>();
    for (const ArchiveTensor& t : read_tensor_archive(c.calib).tensors) {
      calib->emplace(t.name, t.values().cast<double>());
    }
  }
  const QuantizedPackedModel model = quant::quantize_model(archive, config, calib.get());
  const std::uint64_t written = write_efpk(model, c.output);
  nlohmann::json r = base_report(c);
  r["output"] = c.output;
  r["bytes_written"] = written;
  r["config"] = quant::to_json(config);
  r["allocation"] = quant::allocation_report(model);
  return r;
}

nlohmann::json run_inspect(const Command& c) {
  const EfpkReader reader = EfpkReader::open(c.input);
  const QuantizedPackedModel model = read_efpk(c.input);
  nlohmann::json r = base_report(c);
  r["input"] = c.input;
  r["file_size"] = reader.file_size();
  r["header_bytes"] = reader.header_bytes();
  r["register_width"] = reader.register_width();
  r["layers"] = reader.layer_ids();
  r["allocation"] = quant::allocation_report(model);
  return r;
}

nlohmann::json run_unpack_verify(const Command& c, int& exit_code) {
  const QuantizedPackedModel model = read_efpk(c.input);
  std::size_t channels = 0, mismatched = 0;
  nlohmann::json bad = nlohmann::json::array();
  for (const PackedTensorRecord& rec : model.tensors) {
    const auto& p = rec.packed;
    const int r = static_cast<int>(p.register_width);
    for (std::size_t ch = 0; ch < p.cols; ++ch) {
      const auto blocks = p.channel_blocks(ch);
      const int bits = p.channel_bits[ch];
      ++channels;
      if (pack::unpack_channel_simd(blocks, bits, r) !=
          pack::unpack_channel_reference(blocks, bits, r)) {
        ++mismatched;
        if (bad.size() < 16) bad.push_back({{"tensor", rec.name}, {"channel", ch}});
      }
    }
  }
  nlohmann::json r = base_report(c);
  r["input"] = c.input;
  r["tensors"] = model.tensors.size();
  r["channels"] = channels;
  r["mismatched_channels"] = mismatched;
  r["mismatches"] = bad;
  r["roundtrip"] = mismatched == 0 ? "ok" : "mismatch";
  if (mismatched != 0) exit_code = static_cast<int>(ErrorCode::kCorrupt);
  return r;
}

nlohmann::json run_simulate(const Command& c) {
  const pipeline::Scenario scenario = pipeline::scenario_from_json(load_json(c.scenario));
  std::vector<pipeline::SchedPolicy> policies;
  if (c.policy.empty() || c.policy == "all") {
    policies.assign(pipeline::kPolicyLadder.begin(), pipeline::kPolicyLadder.end());
  } else {
    policies.push_back(policy_or(c.policy, pipeline::SchedPolicy::kPlusStealing));
  }
  if (!c.trace_csv.empty() && policies.size() != 1) {
    fail(ErrorCode::kUsage, "--trace-csv needs a single --policy");
  }
  nlohmann::json r = base_report(c);
  r["scenario"] = scenario.name;
  r["n_layers"] = scenario.n_layers;
  r["n_chunks"] = scenario.n_chunks;
  r["steal_threshold"] = scenario.steal_threshold;
  nlohmann::json runs = nlohmann::json::array();
  for (pipeline::SchedPolicy p : policies) {
    const pipeline::PolicyRun run = pipeline::run_policy(scenario, p);
    nlohmann::json s = pipeline::policy_summary(run);
    if (policies.size() == 1) {
      s["timeline"] = pipeline::timeline_to_json(run.timeline, run.graph);
      if (!c.trace_csv.empty()) {
        write_text(c.trace_csv, pipeline::timeline_to_csv(run.timeline, run.graph));
      }
    }
    runs.push_back(std::move(s));
  }
  r["runs"] = runs;
  return r;
}

nlohmann::json run_coldstart_cmd(const Command& c) {
  ColdStartConfig config;
  if (!c.config.empty()) config = coldstart_config_from_json(load_json(c.config));
  if (!c.input.empty()) config.efpk = c.input;
  if (config.efpk.empty()) fail(ErrorCode::kUsage, "--in: EFPK path required");
  if (c.mode) {
    if (*c.mode == "simulated") {
      config.mode = ExecMode::kSimulated;
    } else if (*c.mode == "real") {
      config.mode = ExecMode::kReal;
    } else {
      fail(ErrorCode::kUsage, "--mode: expected simulated or real");
    }
  }
  config.policy.policy = policy_or(c.policy, config.policy.policy);
  if (!c.scenario.empty()) {
    const auto s = pipeline::scenario_from_json(load_json(c.scenario));
    config.cost_model = s.costs;
    config.policy.steal_threshold = s.steal_threshold;
  }
  if (c.prompt_length) config.prompt_length = *c.prompt_length;
  if (c.chunk_length) config.chunk_length = *c.chunk_length;
  if (c.loaders) config.loader_workers = *c.loaders;
  if (c.unpackers) config.unpack_workers = *c.unpackers;
  if (c.load_cost) config.stage_costs.load_per_layer = *c.load_cost;
  if (c.unpack_cost) config.stage_costs.unpack_per_layer = *c.unpack_cost;
  if (c.compute_cost) config.stage_costs.compute_per_layer = *c.compute_cost;
  config.seed = c.seed;
  if (c.verify) {
    config.expected = std::make_shared<const std::map<std::string, Eigen::MatrixXf>>(
        dequantized_weights(read_efpk(config.efpk)));
  }
  const ColdStartReport report = run_coldstart(config);
  if (!c.trace_csv.empty()) write_text(c.trace_csv, report.to_csv());
  nlohmann::json r = base_report(c);
  r["input"] = config.efpk.string();
  r["policy"] = pipeline::policy_name(config.policy.policy);
  r["report"] = report.to_json();
  return r;
}

nlohmann::json run_gen_model(const Command& c) {
  SyntheticModelSpec spec;
  spec.layers = c.layers;
  spec.rows = c.rows;
  spec.cols = c.cols;
  spec.tensors_per_layer = c.tensors;
  spec.seed = c.seed;
  if (c.avg_bits) spec.avg_bits = *c.avg_bits;
  if (c.register_width) spec.register_width = *c.register_width;
  if (c.dtype == "f16") {
    spec.dtype = DType::kF16;
  } else if (c.dtype != "f32") {
    fail(ErrorCode::kUsage, "--dtype: expected f32 or f16");
  }
  const SyntheticModel m = generate_synthetic_model(spec);
  nlohmann::json r = base_report(c);
  r["output"] = c.output;
  r["efpk_bytes"] = write_efpk(m.packed, c.output);
  if (!c.archive_out.empty()) {
    r["archive"] = c.archive_out;
    r["archive_bytes"] = write_tensor_archive(m.archive, c.archive_out);
  }
  r["block_bytes"] = m.packed.block_bytes();
  r["allocation"] = quant::allocation_report(m.packed);
  return r;
}

}  // namespace

nlohmann::json error_report(int code, const std::string& name, const std::string& message) {
  return {{"schema_version", kSchemaVersion},
          {"error", {{"code", name}, {"exit_code", code}, {"message", message}}}};
}

Command parse(const std::vector<std::string>& args) {
  Command cmd;
  CLI::App app{"coldpack: adaptive quantization, weightlet packing and pipeline simulation"};
  app.name("coldpack");
  app.require_subcommand(1, 1);

  auto* quantize = app.add_subcommand("quantize", "Quantize a tensor archive into an EFPK file");
  quantize->add_option("--in", cmd.input, "Tensor archive")->required();
  quantize->add_option("--out", cmd.output, "EFPK output path")->required();
  quantize->add_option("--config", cmd.config, "Quantization config JSON");
  quantize->add_option("--calib", cmd.calib, "Calibration archive (N x D per tensor name)");
  quantize->add_option("--avg-bits", cmd.avg_bits, "Average bits per channel");
  quantize->add_option("--register-width", cmd.register_width, "SIMD register width in bits");
  quantize->add_flag("--smoothing", cmd.smoothing, "Enable static smoothing");

  auto* inspect = app.add_subcommand("inspect", "Print per-tensor bit-width histograms");
  inspect->add_option("input,--in", cmd.input, "EFPK file")->required();

  auto* verify = app.add_subcommand("unpack-verify", "Compare SIMD and reference unpack");
  verify->add_option("input,--in", cmd.input, "EFPK file")->required();

  auto* simulate = app.add_subcommand("simulate", "Run the CPU/NPU pipeline simulator");
  simulate->add_option("--scenario", cmd.scenario, "Scenario JSON")->required();
  simulate->add_option("--policy", cmd.policy, "Policy name or 'all'");
  simulate->add_option("--trace-csv", cmd.trace_csv, "Timeline CSV output");

  auto* coldstart = app.add_subcommand("coldstart", "Run the cold-start pipeline");
  coldstart->add_option("input,--in", cmd.input, "EFPK file");
  coldstart->add_option("--config", cmd.config, "Cold-start config JSON");
  coldstart->add_option("--mode", cmd.mode, "simulated or real");
  coldstart->add_option("--policy", cmd.policy, "Scheduling policy");
  coldstart->add_option("--scenario", cmd.scenario, "Scenario JSON supplying the cost model");
  coldstart->add_option("--prompt-length", cmd.prompt_length, "Prompt tokens");
  coldstart->add_option("--chunk-length", cmd.chunk_length, "Tokens per chunk");
  coldstart->add_option("--loaders", cmd.loaders, "Loader workers");
  coldstart->add_option("--unpackers", cmd.unpackers, "Unpack workers");
  coldstart->add_option("--load-cost", cmd.load_cost, "Fixed virtual load cost per layer");
  coldstart->add_option("--unpack-cost", cmd.unpack_cost, "Fixed virtual unpack cost per layer");
  coldstart->add_option("--compute-cost", cmd.compute_cost,
                        "Fixed virtual compute cost per layer");
  coldstart->add_option("--trace-csv", cmd.trace_csv, "Stage timeline CSV output");
  coldstart->add_flag("--verify", cmd.verify, "Check dequantized weights (real mode)");

  auto* gen = app.add_subcommand("gen-model", "Generate a synthetic model");
  gen->add_option("--out", cmd.output, "EFPK output path")->required();
  gen->add_option("--archive-out", cmd.archive_out, "Source tensor archive output path");
  gen->add_option("--layers", cmd.layers, "Layers");
  gen->add_option("--rows", cmd.rows, "Input dimension D");
  gen->add_option("--cols", cmd.cols, "Output channels C");
  gen->add_option("--tensors", cmd.tensors, "Tensors per layer (1-7)");
  gen->add_option("--avg-bits", cmd.avg_bits, "Average bits per channel");
  gen->add_option("--register-width", cmd.register_width, "SIMD register width in bits");
  gen->add_option("--dtype", cmd.dtype, "Archive dtype: f32 or f16");

  for (CLI::App* sub : {quantize, inspect, verify, simulate, coldstart, gen}) {
    sub->add_option("--report", cmd.report, "Write the JSON report here instead of stdout");
    sub->add_option("--seed", cmd.seed, "Seed (default 0)");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    cmd.help = app.help();
    return cmd;
  } catch (const CLI::CallForAllHelp&) {
    cmd.help = app.help("", CLI::AppFormatMode::All);
    return cmd;
  } catch (const CLI::ParseError& e) {
    fail(ErrorCode::kUsage, e.what());
  }
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->get_help_ptr() != nullptr && sub->get_help_ptr()->count() > 0) {
      cmd.help = sub->help();
      return cmd;
    }
  }

  const std::string name = app.get_subcommands().front()->get_name();
  if (name == "quantize") cmd.subcommand = Subcommand::kQuantize;
  if (name == "inspect") cmd.subcommand = Subcommand::kInspect;
  if (name == "unpack-verify") cmd.subcommand = Subcommand::kUnpackVerify;
  if (name == "simulate") cmd.subcommand = Subcommand::kSimulate;
  if (name == "coldstart") cmd.subcommand = Subcommand::kColdstart;
  if (name == "gen-model") cmd.subcommand = Subcommand::kGenModel;
  return cmd;
}

Outcome run(const Command& command) {
  Outcome out;
  try {
    switch (command.subcommand) {
      case Subcommand::kQuantize: out.report = run_quantize(command); break;
      case Subcommand::kInspect: out.report = run_inspect(command); break;
      case Subcommand::kUnpackVerify: out.report = run_unpack_verify(command, out.exit_code); break;
      case Subcommand::kSimulate: out.report = run_simulate(command); break;
      case Subcommand::kColdstart: out.report = run_coldstart_cmd(command); break;
      case Subcommand::kGenModel: out.report = run_gen_model(command); break;
    }
  } catch (const Error& e) {
    out.exit_code = static_cast<int>(e.code());
    out.report = error_report(out.exit_code, std::string(error_code_name(e.code())), e.what());
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.report = error_report(1, "internal", e.what());
  }
  return out;
}

int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Command cmd;
  try {
    cmd = parse(args);
  } catch (const Error& e) {
    const int code = static_cast<int>(e.code());
    out << error_report(code, std::string(error_code_name(e.code())), e.what()).dump(2) << '\n';
    err << "coldpack: " << e.what() << "\nRun 'coldpack --help' for usage.\n";
    return code;
  }
  if (cmd.help) {
    out << *cmd.help;
    return 0;
  }
  Outcome result = run(cmd);
  const std::string text = result.report.dump(2) + "\n";
  if (result.report.contains("error")) {
    err << "coldpack: " << result.report["error"]["message"].get<std::string>() << '\n';
  }
  if (!cmd.report.empty() && !result.report.contains("error")) {
    try {
      write_text(cmd.report, text);
    } catch (const Error& e) {
      const int code = static_cast<int>(e.code());
      out << error_report(code, std::string(error_code_name(e.code())), e.what()).dump(2)
          << '\n';
      return code;
    }
  } else {
    out << text;
  }
  return result.exit_code;
}

}  // namespace coldpack::cli
