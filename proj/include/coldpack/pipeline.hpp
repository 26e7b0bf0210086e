// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Chunked-prefill task graphs and a deterministic two-executor (CPU, NPU)
// discrete-event simulator with operator placement, position-guided priority
// and CPU task stealing.

#ifndef COLDPACK_PIPELINE_HPP
#define COLDPACK_PIPELINE_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace coldpack::pipeline {

// Operators of one transformer layer for one chunk, in dependency order.
enum class OpKind : std::uint8_t {
  kRmsNormAttn,
  kQuantize,
  kQProj,
  kKProj,
  kVProj,
  kDequantize,
  kAttention,
  kOProj,
  kResidualAdd1,
  kRmsNormFfn,
  kGateProj,
  kUpProj,
  kSwiGLU,
  kDownProj,
  kResidualAdd2,
};

inline constexpr std::uint32_t kOpsPerChunk = 15;

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);
// INT8 matmuls: Q/K/V/O and Gate/Up/Down projections.
bool is_projection(OpKind kind);

enum class Device : std::uint8_t { kCpu, kNpu };
inline constexpr std::array<Device, 2> kDevices = {Device::kCpu, Device::kNpu};

std::string_view device_name(Device device);

struct Task {
  std::uint32_t id = 0;
  std::uint32_t layer = 0;
  std::uint32_t chunk = 0;
  OpKind kind = OpKind::kRmsNormAttn;
  Device device = Device::kCpu;
  std::vector<std::uint32_t> deps;
  // Global rank in a topological order shared by all chunks:
  // layer * 15 + position of the op in the layer.
  std::uint32_t topo_rank = 0;

  std::pair<std::uint32_t, std::uint32_t> priority_key() const { return {chunk, topo_rank}; }
};

struct TaskGraph {
  std::uint32_t n_layers = 0;
  std::uint32_t n_chunks = 0;
  std::vector<Task> tasks;  // tasks[i].id == i

  std::uint32_t id_of(std::uint32_t layer, std::uint32_t chunk, OpKind kind) const;
  const Task& at(std::uint32_t layer, std::uint32_t chunk, OpKind kind) const {
    return tasks[id_of(layer, chunk, kind)];
  }
  std::vector<std::vector<std::uint32_t>> successors() const;
  // Kahn's algorithm; nullopt when the graph has a cycle.
  std::optional<std::vector<std::uint32_t>> topological_order() const;
};

TaskGraph build_prefill_graph(std::uint32_t n_layers, std::uint32_t n_chunks);

enum class SchedPolicy : std::uint8_t {
  kBaselineCoarse,
  kFinePlacement,
  kPlusPriority,
  kPlusStealing,
};

inline constexpr std::array<SchedPolicy, 4> kPolicyLadder = {
    SchedPolicy::kBaselineCoarse, SchedPolicy::kFinePlacement,
    SchedPolicy::kPlusPriority, SchedPolicy::kPlusStealing};

std::string_view policy_name(SchedPolicy policy);
// Accepts canonical names and the short forms coarse/baseline, place/fine,
// priority, steal.
std::optional<SchedPolicy> policy_from_name(std::string_view name);

struct SchedConfig {
  SchedPolicy policy = SchedPolicy::kPlusStealing;
  std::uint32_t steal_threshold = 5;

  void validate() const;
};

// Assigns devices by op kind. Pure function of kind, so idempotent.
TaskGraph place_operators(TaskGraph graph, SchedPolicy policy);

// duration = chunk_scale[c] * (base + slope * (c + 1))
struct CostEntry {
  double base = 0.0;
  double slope = 0.0;
};

class CostModel {
 public:
  void set(OpKind kind, Device device, CostEntry entry);
  bool has(OpKind kind, Device device) const;
  // Throws kMissingCost when no entry exists.
  double duration(OpKind kind, Device device, std::uint32_t chunk) const;

  // Per-chunk length multipliers (variable-length final chunk); missing
  // entries default to 1.
  std::vector<double> chunk_scale;

  const std::map<std::pair<OpKind, Device>, CostEntry>& entries() const { return entries_; }

 private:
  std::map<std::pair<OpKind, Device>, CostEntry> entries_;
};

CostModel cost_model_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const CostModel& model);

struct Interval {
  std::uint32_t task = 0;
  double start = 0.0;
  double end = 0.0;
  bool stolen = false;
};

struct StealEvent {
  double time = 0.0;
  std::uint32_t task = 0;
  std::size_t npu_queue_length = 0;  // before the steal
  bool cpu_idle = false;
};

struct DispatchEvent {
  double time = 0.0;
  Device device = Device::kCpu;  // executor that ran the task
  std::uint32_t task = 0;
  bool stolen = false;
};

struct Timeline {
  std::array<std::vector<Interval>, 2> intervals;  // indexed by Device
  std::vector<double> start;                       // per task id
  std::vector<double> end;
  std::vector<Device> ran_on;
  std::vector<StealEvent> steals;
  std::vector<DispatchEvent> dispatches;
  double makespan = 0.0;

  const std::vector<Interval>& on(Device d) const {
    return intervals[static_cast<std::size_t>(d)];
  }
  // Gaps between consecutive busy intervals of `d`.
  std::vector<std::pair<double, double>> idle(Device d) const;
  double busy_time(Device d) const;
};

Timeline simulate(const TaskGraph& graph, const CostModel& costs,
                  const SchedConfig& config);

struct BubbleRate {
  double rate = 0.0;
  bool no_tasks = false;  // device never ran anything; rate reported as 0
};

// Idle time inside [first start, last end] divided by that span.
BubbleRate bubble_rate(const Timeline& timeline, Device device);

// Longest dependency chain using the costs of each task's placed device.
double critical_path(const TaskGraph& graph, const CostModel& costs);

nlohmann::json timeline_to_json(const Timeline& timeline, const TaskGraph& graph);
// task,layer,chunk,kind,device,start,end,stolen
std::string timeline_to_csv(const Timeline& timeline, const TaskGraph& graph);

struct Scenario {
  std::string name;
  std::uint32_t n_layers = 1;
  std::uint32_t n_chunks = 1;
  std::uint32_t steal_threshold = 5;
  CostModel costs;
};

Scenario scenario_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Scenario& scenario);

// One layer, 16 chunks, attention cost growing with chunk index, constant
// projection costs. Placeholder numbers, not measurements.
Scenario default_scenario();

struct PolicyRun {
  SchedPolicy policy;
  TaskGraph graph;
  Timeline timeline;
};

PolicyRun run_policy(const Scenario& scenario, SchedPolicy policy);

// Summary line per policy: makespan, bubble rates, steal count.
nlohmann::json policy_summary(const PolicyRun& run);

}  // namespace coldpack::pipeline

#endif  // COLDPACK_PIPELINE_HPP
