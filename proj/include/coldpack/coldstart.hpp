// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Cold-start orchestration: layer-by-layer loading from EFPK, unpacking and
// prefill compute, overlapped through bounded order-preserving queues.

#ifndef COLDPACK_COLDSTART_HPP
#define COLDPACK_COLDSTART_HPP

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coldpack/model.hpp"
#include "coldpack/pipeline.hpp"
#include "coldpack/tensorstore.hpp"

namespace coldpack {

enum class ExecMode : std::uint8_t { kSimulated, kReal };

std::string_view exec_mode_name(ExecMode mode);

// Virtual-time stage costs for simulated mode. A fixed per-layer value wins;
// otherwise load and unpack scale with the layer's block bytes, and compute
// is the makespan of a one-layer prefill graph under the configured policy.
struct StageCosts {
  std::optional<double> load_per_layer;
  std::optional<double> unpack_per_layer;
  std::optional<double> compute_per_layer;
  double load_per_mib = 1.0;
  double unpack_per_mib = 0.5;
};

struct ColdStartConfig {
  std::filesystem::path efpk;
  std::uint32_t prompt_length = 256;
  std::uint32_t chunk_length = 32;
  std::uint32_t loader_workers = 2;
  std::uint32_t unpack_workers = 1;
  std::uint32_t compute_workers = 1;  // per logical device, real mode
  std::uint32_t queue_depth = 2;
  ExecMode mode = ExecMode::kSimulated;
  std::optional<pipeline::CostModel> cost_model;
  pipeline::SchedConfig policy;
  StageCosts stage_costs;
  // Real mode: expected dequantized weights by tensor name. When set, every
  // unpacked tensor is dequantized and compared bit-exactly.
  std::shared_ptr<const std::map<std::string, Eigen::MatrixXf>> expected;
  std::uint64_t seed = 0;  // activations for real-mode compute

  std::uint32_t chunk_count() const {
    return (prompt_length + chunk_length - 1) / chunk_length;
  }
  void validate() const;
};

ColdStartConfig coldstart_config_from_json(const nlohmann::json& doc);

struct LayerTiming {
  std::uint32_t layer = 0;
  std::uint64_t bytes = 0;
  double load_start = 0.0, load_end = 0.0;
  double unpack_start = 0.0, unpack_end = 0.0;
  double compute_start = 0.0, compute_end = 0.0;
};

struct ColdStartReport {
  ExecMode mode = ExecMode::kSimulated;
  std::vector<LayerTiming> layers;
  double ttft = 0.0;  // seconds in real mode, virtual units otherwise
  double load_total = 0.0;
  double unpack_total = 0.0;
  double compute_total = 0.0;
  std::uint32_t loader_workers = 0;
  std::uint32_t unpack_workers = 0;
  std::uint32_t compute_workers = 0;
  // Real mode only.
  std::uint64_t bytes_read = 0;
  std::size_t tensors_verified = 0;
  std::size_t tensors_mismatched = 0;
  std::int64_t output_checksum = 0;

  double stage_sum() const { return load_total + unpack_total + compute_total; }
  double overlap_ratio() const {
    const double s = stage_sum();
    return s > 0.0 ? 1.0 - ttft / s : 0.0;
  }
  nlohmann::json to_json() const;
  // task,layer,chunk,kind,device,start,end,stolen with one row per stage.
  std::string to_csv() const;
};

// Worker-count cap from COLDPACK_THREADS; nullopt when unset or invalid.
std::optional<std::uint32_t> thread_cap_from_env();

ColdStartReport run_coldstart(const ColdStartConfig& config);

// Simulated stage pipeline over explicit per-layer costs. Exposed for tests.
struct StageSchedule {
  std::vector<double> load, unpack, compute;  // per layer
};
ColdStartReport simulate_stage_pipeline(const StageSchedule& costs,
                                        std::uint32_t loader_workers,
                                        std::uint32_t unpack_workers,
                                        std::uint32_t queue_depth);

struct SyntheticModelSpec {
  std::uint32_t layers = 2;
  std::uint32_t rows = 256;  // D
  std::uint32_t cols = 256;  // C
  std::uint32_t tensors_per_layer = 4;
  double avg_bits = 5.0;
  std::uint64_t seed = 0;
  int register_width = pack::kDefaultRegisterWidth;
  DType dtype = DType::kF32;

  void validate() const;
};

struct SyntheticModel {
  TensorArchive archive;
  QuantizedPackedModel packed;
};

// Gaussian weights with per-channel scale spread and sparse outliers, then
// quantized and packed.
SyntheticModel generate_synthetic_model(const SyntheticModelSpec& spec);

// Dequantized weights of every tensor in `model`, by name.
std::map<std::string, Eigen::MatrixXf> dequantized_weights(
    const QuantizedPackedModel& model);

}  // namespace coldpack

#endif  // COLDPACK_COLDSTART_HPP
