// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include "coldpack/error.hpp"

namespace coldpack::pipeline {
namespace {

constexpr std::array<std::string_view, kOpsPerChunk> kOpNames = {
    "RmsNormAttn", "Quantize",     "QProj",      "KProj",    "VProj",
    "Dequantize",  "Attention",    "OProj",      "ResidualAdd1", "RmsNormFfn",
    "GateProj",    "UpProj",       "SwiGLU",     "DownProj", "ResidualAdd2"};

std::uint32_t op_index(OpKind kind) { return static_cast<std::uint32_t>(kind); }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return out;
}

std::string fmt_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

}  // namespace

std::string_view op_name(OpKind kind) { return kOpNames[op_index(kind)]; }

std::optional<OpKind> op_from_name(std::string_view name) {
  const std::string key = lower(name);
  for (std::uint32_t k = 0; k < kOpsPerChunk; ++k) {
    if (lower(kOpNames[k]) == key) return static_cast<OpKind>(k);
  }
  return std::nullopt;
}

bool is_projection(OpKind kind) {
  switch (kind) {
    case OpKind::kQProj:
    case OpKind::kKProj:
    case OpKind::kVProj:
    case OpKind::kOProj:
    case OpKind::kGateProj:
    case OpKind::kUpProj:
    case OpKind::kDownProj:
      return true;
    default:
      return false;
  }
}

std::string_view device_name(Device device) {
  return device == Device::kCpu ? "cpu" : "npu";
}

std::uint32_t TaskGraph::id_of(std::uint32_t layer, std::uint32_t chunk,
                               OpKind kind) const {
  if (layer >= n_layers || chunk >= n_chunks) {
    fail(ErrorCode::kInvalidArgument, "task coordinate out of range");
  }
  return (layer * n_chunks + chunk) * kOpsPerChunk + op_index(kind);
}

std::vector<std::vector<std::uint32_t>> TaskGraph::successors() const {
  std::vector<std::vector<std::uint32_t>> succ(tasks.size());
  for (const Task& t : tasks) {
    for (std::uint32_t d : t.deps) succ[d].push_back(t.id);
  }
  return succ;
}

std::optional<std::vector<std::uint32_t>> TaskGraph::topological_order() const {
  const auto succ = successors();
  std::vector<std::size_t> indeg(tasks.size());
  for (const Task& t : tasks) indeg[t.id] = t.deps.size();
  std::vector<std::uint32_t> order;
  order.reserve(tasks.size());
  for (const Task& t : tasks) {
    if (indeg[t.id] == 0) order.push_back(t.id);
  }
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (std::uint32_t s : succ[order[head]]) {
      if (--indeg[s] == 0) order.push_back(s);
    }
  }
  if (order.size() != tasks.size()) return std::nullopt;
  return order;
}

TaskGraph build_prefill_graph(std::uint32_t n_layers, std::uint32_t n_chunks) {
  if (n_layers == 0 || n_chunks == 0) {
    fail(ErrorCode::kInvalidArgument, "graph needs at least one layer and one chunk");
  }
  const std::uint64_t count = std::uint64_t{n_layers} * n_chunks * kOpsPerChunk;
  if (count > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::kTooLarge, "task graph too large");
  }
  TaskGraph g;
  g.n_layers = n_layers;
  g.n_chunks = n_chunks;
  g.tasks.resize(static_cast<std::size_t>(count));
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    for (std::uint32_t c = 0; c < n_chunks; ++c) {
      for (std::uint32_t k = 0; k < kOpsPerChunk; ++k) {
        const auto kind = static_cast<OpKind>(k);
        Task& t = g.tasks[g.id_of(l, c, kind)];
        t.id = g.id_of(l, c, kind);
        t.layer = l;
        t.chunk = c;
        t.kind = kind;
        t.topo_rank = l * kOpsPerChunk + k;
        if (k > 0) {
          t.deps.push_back(t.id - 1);
        } else if (l > 0) {
          t.deps.push_back(g.id_of(l - 1, c, OpKind::kResidualAdd2));
        }
        if (kind == OpKind::kAttention) {
          // Dequantize(l, c) is already the chain predecessor. K and V of the
          // same chunk are reached through it; list them anyway so the causal
          // set is explicit for every c' <= c.
          for (std::uint32_t p = 0; p <= c; ++p) {
            t.deps.push_back(g.id_of(l, p, OpKind::kKProj));
            t.deps.push_back(g.id_of(l, p, OpKind::kVProj));
          }
        }
      }
    }
  }
  return g;
}

std::string_view policy_name(SchedPolicy policy) {
  switch (policy) {
    case SchedPolicy::kBaselineCoarse: return "BaselineCoarse";
    case SchedPolicy::kFinePlacement: return "FinePlacement";
    case SchedPolicy::kPlusPriority: return "PlusPriority";
    case SchedPolicy::kPlusStealing: return "PlusStealing";
  }
  return "unknown";
}

std::optional<SchedPolicy> policy_from_name(std::string_view name) {
  const std::string key = lower(name);
  if (key == "baselinecoarse" || key == "baseline" || key == "coarse") {
    return SchedPolicy::kBaselineCoarse;
  }
  if (key == "fineplacement" || key == "fine" || key == "place") {
    return SchedPolicy::kFinePlacement;
  }
  if (key == "pluspriority" || key == "priority") return SchedPolicy::kPlusPriority;
  if (key == "plusstealing" || key == "steal" || key == "stealing") {
    return SchedPolicy::kPlusStealing;
  }
  return std::nullopt;
}

void SchedConfig::validate() const {
  if (steal_threshold < 1) {
    fail(ErrorCode::kInvalidArgument, "steal threshold must be at least 1");
  }
}

TaskGraph place_operators(TaskGraph graph, SchedPolicy policy) {
  for (Task& t : graph.tasks) {
    if (policy == SchedPolicy::kBaselineCoarse) {
      t.device = t.kind == OpKind::kAttention ? Device::kCpu : Device::kNpu;
    } else {
      t.device = is_projection(t.kind) ? Device::kNpu : Device::kCpu;
    }
  }
  return graph;
}

void CostModel::set(OpKind kind, Device device, CostEntry entry) {
  if (!(std::isfinite(entry.base) && std::isfinite(entry.slope))) {
    fail(ErrorCode::kNonFinite, "cost entries must be finite");
  }
  entries_[{kind, device}] = entry;
}

bool CostModel::has(OpKind kind, Device device) const {
  return entries_.count({kind, device}) != 0;
}

double CostModel::duration(OpKind kind, Device device, std::uint32_t chunk) const {
  const auto it = entries_.find({kind, device});
  if (it == entries_.end()) {
    fail(ErrorCode::kMissingCost, "no cost for " + std::string(op_name(kind)) +
                                      " on " + std::string(device_name(device)));
  }
  const double scale = chunk < chunk_scale.size() ? chunk_scale[chunk] : 1.0;
  const double d = scale * (it->second.base + it->second.slope * (chunk + 1.0));
  if (!(d > 0.0) || !std::isfinite(d)) {
    fail(ErrorCode::kInvalidArgument,
         "cost of " + std::string(op_name(kind)) + " on " +
             std::string(device_name(device)) + " for chunk " +
             std::to_string(chunk) + " is not positive");
  }
  return d;
}

CostModel cost_model_from_json(const nlohmann::json& doc) {
  CostModel m;
  try {
    for (const auto& e : doc.at("entries")) {
      const std::string op = e.at("op").get<std::string>();
      const auto kind = op_from_name(op);
      if (!kind) fail(ErrorCode::kInvalidArgument, "unknown op kind '" + op + "'");
      const std::string dev = lower(e.at("device").get<std::string>());
      if (dev != "cpu" && dev != "npu") {
        fail(ErrorCode::kInvalidArgument, "unknown device '" + dev + "'");
      }
      CostEntry entry;
      entry.base = e.at("base").get<double>();
      entry.slope = e.value("slope", 0.0);
      m.set(*kind, dev == "cpu" ? Device::kCpu : Device::kNpu, entry);
    }
    if (doc.contains("chunk_scale")) {
      m.chunk_scale = doc.at("chunk_scale").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("cost model: ") + e.what());
  }
  for (double s : m.chunk_scale) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      fail(ErrorCode::kInvalidArgument, "chunk_scale entries must be positive");
    }
  }
  return m;
}

nlohmann::json to_json(const CostModel& model) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, e] : model.entries()) {
    entries.push_back({{"op", op_name(key.first)},
                       {"device", device_name(key.second)},
                       {"base", e.base},
                       {"slope", e.slope}});
  }
  nlohmann::json doc = {{"entries", entries}};
  if (!model.chunk_scale.empty()) doc["chunk_scale"] = model.chunk_scale;
  return doc;
}

std::vector<std::pair<double, double>> Timeline::idle(Device d) const {
  std::vector<std::pair<double, double>> gaps;
  const auto& iv = on(d);
  for (std::size_t i = 1; i < iv.size(); ++i) {
    if (iv[i].start > iv[i - 1].end) gaps.emplace_back(iv[i - 1].end, iv[i].start);
  }
  return gaps;
}

double Timeline::busy_time(Device d) const {
  double total = 0.0;
  for (const Interval& i : on(d)) total += i.end - i.start;
  return total;
}

namespace {

// Ready-queue key. Non-priority policies: (topo_rank, insertion seq).
// PlusPriority and above: (chunk, topo_rank). The task id breaks any
// remaining tie so the order is total.
using QueueKey = std::tuple<std::uint64_t, std::uint64_t, std::uint32_t>;

bool uses_priority(SchedPolicy p) {
  return p == SchedPolicy::kPlusPriority || p == SchedPolicy::kPlusStealing;
}

}  // namespace

Timeline simulate(const TaskGraph& graph, const CostModel& costs,
                  const SchedConfig& config) {
  config.validate();
  const std::size_t n = graph.tasks.size();
  if (n == 0) fail(ErrorCode::kEmptyInput, "task graph is empty");
  const bool priority = uses_priority(config.policy);
  const bool stealing = config.policy == SchedPolicy::kPlusStealing;

  // Resolve every duration up front so a missing entry fails before any
  // simulated time passes.
  std::vector<std::array<double, 2>> dur(n, {0.0, 0.0});
  for (const Task& t : graph.tasks) {
    dur[t.id][static_cast<std::size_t>(t.device)] =
        costs.duration(t.kind, t.device, t.chunk);
    if (stealing && t.device == Device::kNpu) {
      dur[t.id][static_cast<std::size_t>(Device::kCpu)] =
          costs.duration(t.kind, Device::kCpu, t.chunk);
    }
  }

  const auto succ = graph.successors();
  std::vector<std::size_t> pending(n);
  for (const Task& t : graph.tasks) pending[t.id] = t.deps.size();

  std::array<std::set<QueueKey>, 2> queues;
  std::uint64_t seq = 0;
  auto enqueue = [&](std::uint32_t id) {
    const Task& t = graph.tasks[id];
    QueueKey key = priority ? QueueKey{t.chunk, t.topo_rank, id}
                            : QueueKey{t.topo_rank, seq, id};
    ++seq;
    queues[static_cast<std::size_t>(t.device)].insert(key);
  };
  for (const Task& t : graph.tasks) {
    if (pending[t.id] == 0) enqueue(t.id);
  }

  Timeline tl;
  tl.start.assign(n, -1.0);
  tl.end.assign(n, -1.0);
  tl.ran_on.assign(n, Device::kCpu);

  struct Running {
    bool busy = false;
    std::uint32_t task = 0;
    double end = 0.0;
  };
  std::array<Running, 2> running;
  std::size_t finished = 0;
  double now = 0.0;

  auto start_task = [&](Device executor, std::uint32_t id, bool stolen) {
    const std::size_t e = static_cast<std::size_t>(executor);
    const double d = dur[id][e];
    running[e] = {true, id, now + d};
    tl.start[id] = now;
    tl.end[id] = now + d;
    tl.ran_on[id] = executor;
    tl.intervals[e].push_back({id, now, now + d, stolen});
    tl.dispatches.push_back({now, executor, id, stolen});
  };

  auto dispatch = [&] {
    auto& npu_q = queues[static_cast<std::size_t>(Device::kNpu)];
    auto& cpu_q = queues[static_cast<std::size_t>(Device::kCpu)];
    auto& npu = running[static_cast<std::size_t>(Device::kNpu)];
    auto& cpu = running[static_cast<std::size_t>(Device::kCpu)];
    if (!npu.busy && !npu_q.empty()) {
      const std::uint32_t id = std::get<2>(*npu_q.begin());
      npu_q.erase(npu_q.begin());
      start_task(Device::kNpu, id, false);
    }
    if (!cpu.busy) {
      if (!cpu_q.empty()) {
        const std::uint32_t id = std::get<2>(*cpu_q.begin());
        cpu_q.erase(cpu_q.begin());
        start_task(Device::kCpu, id, false);
      } else if (stealing && npu_q.size() > config.steal_threshold) {
        const std::uint32_t id = std::get<2>(*npu_q.begin());
        tl.steals.push_back({now, id, npu_q.size(), true});
        npu_q.erase(npu_q.begin());
        start_task(Device::kCpu, id, true);
      }
    }
  };

  while (true) {
    dispatch();
    if (!running[0].busy && !running[1].busy) break;
    double next = std::numeric_limits<double>::infinity();
    for (const Running& r : running) {
      if (r.busy) next = std::min(next, r.end);
    }
    now = next;
    for (Device d : kDevices) {
      Running& r = running[static_cast<std::size_t>(d)];
      if (!r.busy || r.end != now) continue;
      r.busy = false;
      ++finished;
      for (std::uint32_t s : succ[r.task]) {
        if (--pending[s] == 0) enqueue(s);
      }
    }
  }

  if (finished != n) {
    std::uint32_t first = 0;
    for (; first < n; ++first) {
      if (tl.start[first] < 0.0) break;
    }
    const Task& t = graph.tasks[first];
    fail(ErrorCode::kDeadlock,
         "deadlock: " + std::to_string(n - finished) + " of " + std::to_string(n) +
             " tasks never became ready; first is task " + std::to_string(t.id) +
             " (" + std::string(op_name(t.kind)) + ", layer " +
             std::to_string(t.layer) + ", chunk " + std::to_string(t.chunk) +
             ") with " + std::to_string(pending[t.id]) + " unmet dependencies");
  }
  tl.makespan = *std::max_element(tl.end.begin(), tl.end.end());
  return tl;
}

BubbleRate bubble_rate(const Timeline& timeline, Device device) {
  const auto& iv = timeline.on(device);
  if (iv.empty()) return {0.0, true};
  const double span = iv.back().end - iv.front().start;
  if (!(span > 0.0)) return {0.0, false};
  double idle = 0.0;
  for (const auto& [a, b] : timeline.idle(device)) idle += b - a;
  return {idle / span, false};
}

double critical_path(const TaskGraph& graph, const CostModel& costs) {
  const auto order = graph.topological_order();
  if (!order) fail(ErrorCode::kDeadlock, "task graph has a cycle");
  std::vector<double> finish(graph.tasks.size(), 0.0);
  double best = 0.0;
  for (std::uint32_t id : *order) {
    const Task& t = graph.tasks[id];
    double ready = 0.0;
    for (std::uint32_t d : t.deps) ready = std::max(ready, finish[d]);
    finish[id] = ready + costs.duration(t.kind, t.device, t.chunk);
    best = std::max(best, finish[id]);
  }
  return best;
}

nlohmann::json timeline_to_json(const Timeline& timeline, const TaskGraph& graph) {
  nlohmann::json devices = nlohmann::json::object();
  for (Device d : kDevices) {
    const BubbleRate br = bubble_rate(timeline, d);
    nlohmann::json intervals = nlohmann::json::array();
    for (const Interval& i : timeline.on(d)) {
      const Task& t = graph.tasks[i.task];
      intervals.push_back({{"task", i.task},
                           {"layer", t.layer},
                           {"chunk", t.chunk},
                           {"kind", op_name(t.kind)},
                           {"start", i.start},
                           {"end", i.end},
                           {"stolen", i.stolen}});
    }
    nlohmann::json idle = nlohmann::json::array();
    for (const auto& [a, b] : timeline.idle(d)) idle.push_back({a, b});
    devices[std::string(device_name(d))] = {{"busy", timeline.busy_time(d)},
                                            {"bubble_rate", br.rate},
                                            {"no_tasks", br.no_tasks},
                                            {"intervals", intervals},
                                            {"idle", idle}};
  }
  nlohmann::json steals = nlohmann::json::array();
  for (const StealEvent& s : timeline.steals) {
    steals.push_back({{"time", s.time},
                      {"task", s.task},
                      {"npu_queue_length", s.npu_queue_length}});
  }
  return {{"makespan", timeline.makespan}, {"devices", devices}, {"steals", steals}};
}

std::string timeline_to_csv(const Timeline& timeline, const TaskGraph& graph) {
  std::ostringstream out;
  out << "task,layer,chunk,kind,device,start,end,stolen\n";
  for (const DispatchEvent& e : timeline.dispatches) {
    const Task& t = graph.tasks[e.task];
    out << e.task << ',' << t.layer << ',' << t.chunk << ',' << op_name(t.kind)
        << ',' << device_name(e.device) << ',' << fmt_time(timeline.start[e.task])
        << ',' << fmt_time(timeline.end[e.task]) << ',' << (e.stolen ? 1 : 0)
        << '\n';
  }
  return out.str();
}

Scenario scenario_from_json(const nlohmann::json& doc) {
  Scenario s;
  try {
    s.name = doc.value("name", std::string("scenario"));
    s.n_layers = doc.at("n_layers").get<std::uint32_t>();
    s.n_chunks = doc.at("n_chunks").get<std::uint32_t>();
    s.steal_threshold = doc.value("steal_threshold", 5u);
    s.costs = cost_model_from_json(doc.at("costs"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("scenario: ") + e.what());
  }
  if (s.n_layers == 0 || s.n_chunks == 0) {
    fail(ErrorCode::kInvalidArgument, "scenario needs layers and chunks");
  }
  if (s.steal_threshold < 1) {
    fail(ErrorCode::kInvalidArgument, "steal threshold must be at least 1");
  }
  return s;
}

nlohmann::json to_json(const Scenario& s) {
  return {{"name", s.name},
          {"n_layers", s.n_layers},
          {"n_chunks", s.n_chunks},
          {"steal_threshold", s.steal_threshold},
          {"costs", to_json(s.costs)}};
}

Scenario default_scenario() {
  Scenario s;
  s.name = "chunked-prefill";
  s.n_layers = 1;
  s.n_chunks = 16;
  s.steal_threshold = 5;
  CostModel& m = s.costs;
  // CPU costs of the non-matmul operators; the NPU runs them 2.1x slower.
  const std::array<std::pair<OpKind, double>, 7> cpu_ops = {{
      {OpKind::kRmsNormAttn, 0.4},
      {OpKind::kQuantize, 0.3},
      {OpKind::kDequantize, 0.3},
      {OpKind::kResidualAdd1, 0.2},
      {OpKind::kRmsNormFfn, 0.4},
      {OpKind::kSwiGLU, 0.6},
      {OpKind::kResidualAdd2, 0.2},
  }};
  for (const auto& [kind, c] : cpu_ops) {
    m.set(kind, Device::kCpu, {c, 0.0});
    m.set(kind, Device::kNpu, {2.1 * c, 0.0});
  }
  // Attention grows with the number of preceding chunks.
  m.set(OpKind::kAttention, Device::kCpu, {0.2, 0.25});
  m.set(OpKind::kAttention, Device::kNpu, {0.5, 0.6});
  // Projections: fast on the NPU, several times slower on the CPU.
  const std::array<std::pair<OpKind, double>, 7> proj = {{
      {OpKind::kQProj, 0.5},
      {OpKind::kKProj, 0.5},
      {OpKind::kVProj, 0.5},
      {OpKind::kOProj, 0.5},
      {OpKind::kGateProj, 1.0},
      {OpKind::kUpProj, 1.0},
      {OpKind::kDownProj, 1.0},
  }};
  for (const auto& [kind, c] : proj) {
    m.set(kind, Device::kNpu, {c, 0.0});
    m.set(kind, Device::kCpu, {5.0 * c, 0.0});
  }
  return s;
}

PolicyRun run_policy(const Scenario& scenario, SchedPolicy policy) {
  PolicyRun run{policy,
                place_operators(build_prefill_graph(scenario.n_layers, scenario.n_chunks),
                                policy),
                {}};
  run.timeline = simulate(run.graph, scenario.costs, {policy, scenario.steal_threshold});
  return run;
}

nlohmann::json policy_summary(const PolicyRun& run) {
  const BubbleRate cpu = bubble_rate(run.timeline, Device::kCpu);
  const BubbleRate npu = bubble_rate(run.timeline, Device::kNpu);
  return {{"policy", policy_name(run.policy)},
          {"makespan", run.timeline.makespan},
          {"cpu_bubble_rate", cpu.rate},
          {"npu_bubble_rate", npu.rate},
          {"cpu_no_tasks", cpu.no_tasks},
          {"npu_no_tasks", npu.no_tasks},
          {"steals", run.timeline.steals.size()}};
}

}  // namespace coldpack::pipeline
