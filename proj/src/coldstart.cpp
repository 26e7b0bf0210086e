// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/coldstart.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <exception>
#include <functional>
#include <future>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <system_error>
#include <thread>

#include "coldpack/error.hpp"
#include "coldpack/pack.hpp"

namespace coldpack {
namespace {

constexpr double kMiB = 1024.0 * 1024.0;

std::string fmt_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

// ---------------------------------------------------------------------------
// Simulated mode

enum class WorkerState { kIdle, kBusy, kHolding };

struct SimWorker {
  WorkerState state = WorkerState::kIdle;
  std::size_t layer = 0;
  double until = 0.0;
};

// Order-preserving bounded queue on the virtual clock. A finished layer can
// only be pushed when it is the next expected index and there is room.
struct SimQueue {
  std::deque<std::size_t> items;
  std::size_t next_push = 0;
  std::uint32_t depth = 2;

  bool try_push(std::size_t layer) {
    if (layer != next_push || items.size() >= depth) return false;
    items.push_back(layer);
    ++next_push;
    return true;
  }
};

}  // namespace

std::string_view exec_mode_name(ExecMode mode) {
  return mode == ExecMode::kSimulated ? "simulated" : "real";
}

ColdStartReport simulate_stage_pipeline(const StageSchedule& costs,
                                        std::uint32_t loader_workers,
                                        std::uint32_t unpack_workers,
                                        std::uint32_t queue_depth) {
  const std::size_t n = costs.load.size();
  if (n == 0) fail(ErrorCode::kEmptyInput, "no layers to schedule");
  if (costs.unpack.size() != n || costs.compute.size() != n) {
    fail(ErrorCode::kDimensionMismatch, "stage cost vectors differ in length");
  }
  if (loader_workers == 0 || unpack_workers == 0 || queue_depth == 0) {
    fail(ErrorCode::kInvalidArgument, "worker counts and queue depth must be positive");
  }
  for (const auto* v : {&costs.load, &costs.unpack, &costs.compute}) {
    for (double d : *v) {
      if (!(d >= 0.0) || !std::isfinite(d)) {
        fail(ErrorCode::kInvalidArgument, "stage costs must be finite and non-negative");
      }
    }
  }

  ColdStartReport r;
  r.mode = ExecMode::kSimulated;
  r.loader_workers = loader_workers;
  r.unpack_workers = unpack_workers;
  r.compute_workers = 1;
  r.layers.resize(n);
  for (std::size_t l = 0; l < n; ++l) r.layers[l].layer = static_cast<std::uint32_t>(l);

  std::vector<SimWorker> loaders(loader_workers), unpackers(unpack_workers);
  SimWorker compute;
  SimQueue loaded{{}, 0, queue_depth}, unpacked{{}, 0, queue_depth};
  std::size_t next_load = 0, computed = 0;
  double now = 0.0;

  while (computed < n) {
    bool changed = true;
    while (changed) {
      changed = false;
      // Hand-offs first so freed slots are visible to the starts below.
      for (SimWorker& w : loaders) {
        if (w.state == WorkerState::kHolding && loaded.try_push(w.layer)) {
          w.state = WorkerState::kIdle;
          changed = true;
        }
      }
      for (SimWorker& w : unpackers) {
        if (w.state == WorkerState::kHolding && unpacked.try_push(w.layer)) {
          w.state = WorkerState::kIdle;
          changed = true;
        }
      }
      for (SimWorker& w : loaders) {
        if (w.state == WorkerState::kIdle && next_load < n) {
          const std::size_t l = next_load++;
          w = {WorkerState::kBusy, l, now + costs.load[l]};
          r.layers[l].load_start = now;
          r.layers[l].load_end = w.until;
          changed = true;
        }
      }
      for (SimWorker& w : unpackers) {
        if (w.state == WorkerState::kIdle && !loaded.items.empty()) {
          const std::size_t l = loaded.items.front();
          loaded.items.pop_front();
          w = {WorkerState::kBusy, l, now + costs.unpack[l]};
          r.layers[l].unpack_start = now;
          r.layers[l].unpack_end = w.until;
          changed = true;
        }
      }
      if (compute.state == WorkerState::kIdle && !unpacked.items.empty()) {
        const std::size_t l = unpacked.items.front();
        unpacked.items.pop_front();
        compute = {WorkerState::kBusy, l, now + costs.compute[l]};
        r.layers[l].compute_start = now;
        r.layers[l].compute_end = compute.until;
        changed = true;
      }
    }

    double next = std::numeric_limits<double>::infinity();
    auto consider = [&](const SimWorker& w) {
      if (w.state == WorkerState::kBusy) next = std::min(next, w.until);
    };
    std::for_each(loaders.begin(), loaders.end(), consider);
    std::for_each(unpackers.begin(), unpackers.end(), consider);
    consider(compute);
    if (!std::isfinite(next)) {
      fail(ErrorCode::kDeadlock, "stage pipeline stalled with " +
                                     std::to_string(n - computed) + " layers pending");
    }
    now = next;
    auto finish = [&](SimWorker& w) {
      if (w.state == WorkerState::kBusy && w.until == now) w.state = WorkerState::kHolding;
    };
    std::for_each(loaders.begin(), loaders.end(), finish);
    std::for_each(unpackers.begin(), unpackers.end(), finish);
    if (compute.state == WorkerState::kBusy && compute.until == now) {
      compute.state = WorkerState::kIdle;
      ++computed;
    }
  }

  for (std::size_t l = 0; l < n; ++l) {
    r.load_total += costs.load[l];
    r.unpack_total += costs.unpack[l];
    r.compute_total += costs.compute[l];
    r.ttft = std::max(r.ttft, r.layers[l].compute_end);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Config and report

void ColdStartConfig::validate() const {
  if (loader_workers == 0 || unpack_workers == 0 || compute_workers == 0) {
    fail(ErrorCode::kInvalidArgument, "worker counts must be at least 1");
  }
  if (queue_depth == 0) fail(ErrorCode::kInvalidArgument, "queue depth must be at least 1");
  if (prompt_length == 0 || chunk_length == 0) {
    fail(ErrorCode::kInvalidArgument, "prompt and chunk length must be positive");
  }
  if (chunk_length > prompt_length) {
    fail(ErrorCode::kInvalidArgument, "chunk length exceeds prompt length");
  }
  if (mode == ExecMode::kSimulated && !cost_model && !stage_costs.compute_per_layer) {
    fail(ErrorCode::kMissingCost,
         "simulated mode needs a cost model or a fixed compute cost per layer");
  }
  policy.validate();
}

ColdStartConfig coldstart_config_from_json(const nlohmann::json& doc) {
  ColdStartConfig c;
  try {
    if (doc.contains("efpk")) c.efpk = doc.at("efpk").get<std::string>();
    c.prompt_length = doc.value("prompt_length", c.prompt_length);
    c.chunk_length = doc.value("chunk_length", c.chunk_length);
    c.loader_workers = doc.value("loader_workers", c.loader_workers);
    c.unpack_workers = doc.value("unpack_workers", c.unpack_workers);
    c.compute_workers = doc.value("compute_workers", c.compute_workers);
    c.queue_depth = doc.value("queue_depth", c.queue_depth);
    c.seed = doc.value("seed", c.seed);
    const std::string mode = doc.value("mode", std::string("simulated"));
    if (mode == "simulated") {
      c.mode = ExecMode::kSimulated;
    } else if (mode == "real") {
      c.mode = ExecMode::kReal;
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown mode '" + mode + "'");
    }
    if (doc.contains("policy")) {
      const std::string name = doc.at("policy").get<std::string>();
      const auto p = pipeline::policy_from_name(name);
      if (!p) fail(ErrorCode::kInvalidArgument, "unknown policy '" + name + "'");
      c.policy.policy = *p;
    }
    c.policy.steal_threshold = doc.value("steal_threshold", c.policy.steal_threshold);
    if (doc.contains("cost_model")) {
      c.cost_model = pipeline::cost_model_from_json(doc.at("cost_model"));
    }
    if (doc.contains("stage_costs")) {
      const auto& s = doc.at("stage_costs");
      if (s.contains("load")) c.stage_costs.load_per_layer = s.at("load").get<double>();
      if (s.contains("unpack")) c.stage_costs.unpack_per_layer = s.at("unpack").get<double>();
      if (s.contains("compute")) {
        c.stage_costs.compute_per_layer = s.at("compute").get<double>();
      }
      c.stage_costs.load_per_mib = s.value("load_per_mib", c.stage_costs.load_per_mib);
      c.stage_costs.unpack_per_mib = s.value("unpack_per_mib", c.stage_costs.unpack_per_mib);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("coldstart config: ") + e.what());
  }
  return c;
}

nlohmann::json ColdStartReport::to_json() const {
  nlohmann::json layers_doc = nlohmann::json::array();
  for (const LayerTiming& t : layers) {
    layers_doc.push_back({{"layer", t.layer},
                          {"bytes", t.bytes},
                          {"load", {t.load_start, t.load_end}},
                          {"unpack", {t.unpack_start, t.unpack_end}},
                          {"compute", {t.compute_start, t.compute_end}}});
  }
  nlohmann::json doc = {
      {"mode", exec_mode_name(mode)},
      {"ttft", ttft},
      {"stage_totals", {{"load", load_total}, {"unpack", unpack_total}, {"compute", compute_total}}},
      {"overlap_ratio", overlap_ratio()},
      {"workers", {{"loader", loader_workers}, {"unpack", unpack_workers}, {"compute", compute_workers}}},
      {"layers", layers_doc}};
  if (mode == ExecMode::kReal) {
    doc["bytes_read"] = bytes_read;
    doc["tensors_verified"] = tensors_verified;
    doc["tensors_mismatched"] = tensors_mismatched;
    doc["output_checksum"] = output_checksum;
  }
  return doc;
}

std::string ColdStartReport::to_csv() const {
  std::ostringstream out;
  out << "task,layer,chunk,kind,device,start,end,stolen\n";
  std::size_t id = 0;
  for (const LayerTiming& t : layers) {
    out << id++ << ',' << t.layer << ",0,load,loader," << fmt_time(t.load_start) << ','
        << fmt_time(t.load_end) << ",0\n";
    out << id++ << ',' << t.layer << ",0,unpack,unpacker," << fmt_time(t.unpack_start)
        << ',' << fmt_time(t.unpack_end) << ",0\n";
    out << id++ << ',' << t.layer << ",0,compute,compute," << fmt_time(t.compute_start)
        << ',' << fmt_time(t.compute_end) << ",0\n";
  }
  return out.str();
}

std::optional<std::uint32_t> thread_cap_from_env() {
  const char* v = std::getenv("COLDPACK_THREADS");
  if (v == nullptr || *v == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0 || n > 4096) return std::nullopt;
  return static_cast<std::uint32_t>(n);
}

namespace {

std::vector<std::uint64_t> layer_bytes(const EfpkReader& reader) {
  std::vector<std::uint64_t> bytes(reader.layer_count(), 0);
  std::size_t pos = 0;
  const auto& ids = reader.layer_ids();
  for (const EfpkDescriptor& d : reader.descriptors()) {
    while (ids[pos] != d.layer) ++pos;
    bytes[pos] += d.data_end() - d.data_begin();
  }
  return bytes;
}

double prefill_layer_makespan(const ColdStartConfig& config) {
  pipeline::CostModel costs = *config.cost_model;
  const std::uint32_t chunks = config.chunk_count();
  if (costs.chunk_scale.empty() && config.prompt_length % config.chunk_length != 0) {
    costs.chunk_scale.assign(chunks, 1.0);
    costs.chunk_scale.back() =
        static_cast<double>(config.prompt_length % config.chunk_length) / config.chunk_length;
  }
  const auto graph = pipeline::place_operators(pipeline::build_prefill_graph(1, chunks),
                                               config.policy.policy);
  return pipeline::simulate(graph, costs, config.policy).makespan;
}

ColdStartReport run_simulated(const ColdStartConfig& config) {
  const EfpkReader reader = EfpkReader::open(config.efpk);
  const auto bytes = layer_bytes(reader);
  const std::size_t n = bytes.size();
  const StageCosts& sc = config.stage_costs;
  StageSchedule s;
  const double compute =
      sc.compute_per_layer ? *sc.compute_per_layer : prefill_layer_makespan(config);
  for (std::size_t l = 0; l < n; ++l) {
    const double mib = static_cast<double>(bytes[l]) / kMiB;
    s.load.push_back(sc.load_per_layer ? *sc.load_per_layer : mib * sc.load_per_mib);
    s.unpack.push_back(sc.unpack_per_layer ? *sc.unpack_per_layer : mib * sc.unpack_per_mib);
    s.compute.push_back(compute);
  }
  ColdStartReport r = simulate_stage_pipeline(s, config.loader_workers,
                                              config.unpack_workers, config.queue_depth);
  for (std::size_t l = 0; l < n; ++l) {
    r.layers[l].layer = reader.layer_ids()[l];
    r.layers[l].bytes = bytes[l];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Real mode

// Bounded queue whose pushes are admitted strictly in index order. abort()
// wakes every waiter; waits then return false.
template <class T>
class OrderedQueue {
 public:
  explicit OrderedQueue(std::size_t depth) : depth_(depth) {}

  bool push(std::size_t index, T item) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return aborted_ || (index == next_ && items_.size() < depth_); });
    if (aborted_) return false;
    items_.push_back(std::move(item));
    ++next_;
    cv_.notify_all();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return aborted_ || !items_.empty() || closed_; });
    if (aborted_ || items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    cv_.notify_all();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  std::size_t depth_;
  std::size_t next_ = 0;
  bool closed_ = false;
  bool aborted_ = false;
};

class WorkerPool {
 public:
  explicit WorkerPool(std::uint32_t threads) {
    try {
      for (std::uint32_t i = 0; i < threads; ++i) {
        workers_.emplace_back([this] { loop(); });
      }
    } catch (const std::system_error& e) {
      shutdown();
      fail(ErrorCode::kWorkerFailure, std::string("cannot start worker: ") + e.what());
    }
  }
  ~WorkerPool() { shutdown(); }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  template <class F>
  auto submit(F&& f) -> std::future<decltype(f())> {
    auto task = std::make_shared<std::packaged_task<decltype(f())()>>(std::forward<F>(f));
    auto fut = task->get_future();
    {
      std::lock_guard lock(mu_);
      jobs_.emplace_back([task] { (*task)(); });
    }
    cv_.notify_one();
    return fut;
  }

 private:
  void loop() {
    while (true) {
      std::function<void()> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) {
      if (t.joinable()) t.join();
    }
    workers_.clear();
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> workers_;
  bool stop_ = false;
};

using ActivationMatrix =
    Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LoadedLayer {
  std::size_t position = 0;
  EfpkLayer layer;
  double load_start = 0.0, load_end = 0.0;
};

struct UnpackedTensor {
  CodeMatrix codes;
  std::vector<float> scales;
  float activation_scale = 0.0f;
  std::uint32_t rows = 0;
};

struct UnpackedLayer {
  std::size_t position = 0;
  std::vector<UnpackedTensor> tensors;
  double load_start = 0.0, load_end = 0.0;
  double unpack_start = 0.0, unpack_end = 0.0;
  std::uint64_t bytes = 0;
  std::size_t verified = 0, mismatched = 0;
};

// rows [r0, r1) of x times w, int8 inputs with int32 accumulation; returns
// the sum of all accumulators.
std::int64_t int8_matmul_sum(const ActivationMatrix& x, Eigen::Index r0, Eigen::Index r1,
                             const CodeMatrix& w, Eigen::MatrixXi& out) {
  const Eigen::Index d = w.rows();
  out.resize(r1 - r0, w.cols());
  std::int64_t sum = 0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const std::int8_t* wc = w.data() + j * d;
    for (Eigen::Index i = r0; i < r1; ++i) {
      const std::int8_t* xr = x.data() + i * d;
      std::int32_t acc = 0;
      for (Eigen::Index k = 0; k < d; ++k) acc += std::int32_t{xr[k]} * std::int32_t{wc[k]};
      out(i - r0, j) = acc;
      sum += acc;
    }
  }
  return sum;
}

ActivationMatrix make_activations(std::uint32_t tokens, std::uint32_t dim,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (std::uint64_t{dim} << 32));
  ActivationMatrix x(tokens, dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = static_cast<std::int8_t>(static_cast<int>(rng() % 255) - 127);
  }
  return x;
}

ColdStartReport run_real(const ColdStartConfig& config) {
  const EfpkReader reader = EfpkReader::open(config.efpk);
  const std::size_t n = reader.layer_count();
  if (n == 0) fail(ErrorCode::kEmptyInput, "EFPK holds no layers");

  std::uint32_t loaders = config.loader_workers, unpackers = config.unpack_workers,
                computers = config.compute_workers;
  if (const auto cap = thread_cap_from_env()) {
    loaders = std::min(loaders, *cap);
    unpackers = std::min(unpackers, *cap);
    computers = std::min(computers, *cap);
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto now = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  OrderedQueue<LoadedLayer> loaded(config.queue_depth);
  OrderedQueue<UnpackedLayer> unpacked(config.queue_depth);
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto record_error = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = e;
    }
    loaded.abort();
    unpacked.abort();
  };

  std::atomic<std::size_t> next_layer{0};
  std::atomic<std::uint32_t> loaders_left{loaders};
  std::atomic<std::uint32_t> unpackers_left{unpackers};

  auto loader_main = [&] {
    try {
      while (true) {
        const std::size_t pos = next_layer.fetch_add(1);
        if (pos >= n) break;
        LoadedLayer item;
        item.position = pos;
        item.load_start = now();
        item.layer = reader.read_layer(pos);
        item.load_end = now();
        if (!loaded.push(pos, std::move(item))) break;
      }
    } catch (...) {
      record_error(std::current_exception());
    }
    if (loaders_left.fetch_sub(1) == 1) loaded.close();
  };

  const auto* expected = config.expected.get();
  auto unpacker_main = [&] {
    try {
      while (auto item = loaded.pop()) {
        UnpackedLayer out;
        out.position = item->position;
        out.load_start = item->load_start;
        out.load_end = item->load_end;
        out.bytes = item->layer.raw.size();
        out.unpack_start = now();
        for (const PackedTensorRecord& rec : item->layer.tensors) {
          UnpackedTensor t;
          t.codes = pack::unpack_tensor(rec.packed, pack::UnpackKernel::kSimd);
          t.scales = rec.packed.scales;
          t.activation_scale = rec.activation_scale;
          t.rows = rec.packed.rows;
          if (expected != nullptr) {
            const auto it = expected->find(rec.name);
            const bool ok = it != expected->end() &&
                            (pack::dequantize_codes(t.codes, t.scales).array() ==
                             it->second.array())
                                .all();
            ++(ok ? out.verified : out.mismatched);
          }
          out.tensors.push_back(std::move(t));
        }
        out.unpack_end = now();
        if (!unpacked.push(out.position, std::move(out))) break;
      }
    } catch (...) {
      record_error(std::current_exception());
    }
    if (unpackers_left.fetch_sub(1) == 1) unpacked.close();
  };

  ColdStartReport r;
  r.mode = ExecMode::kReal;
  r.loader_workers = loaders;
  r.unpack_workers = unpackers;
  r.compute_workers = computers;
  r.layers.resize(n);

  {
    // Pools are declared before the stage threads so that, on unwind, the
    // threads are joined first.
    WorkerPool npu_pool(computers);
    WorkerPool cpu_pool(computers);
    std::vector<std::thread> threads;
    auto join_all = [&] {
      for (auto& t : threads) {
        if (t.joinable()) t.join();
      }
    };
    try {
      for (std::uint32_t i = 0; i < loaders; ++i) threads.emplace_back(loader_main);
      for (std::uint32_t i = 0; i < unpackers; ++i) threads.emplace_back(unpacker_main);
    } catch (const std::system_error& e) {
      loaded.abort();
      unpacked.abort();
      join_all();
      fail(ErrorCode::kWorkerFailure, std::string("cannot start stage thread: ") + e.what());
    }

    std::map<std::uint32_t, std::shared_ptr<const ActivationMatrix>> activations;
    const std::uint32_t chunks = config.chunk_count();
    try {
      while (auto layer = unpacked.pop()) {
        LayerTiming& t = r.layers[layer->position];
        t.layer = reader.layer_ids()[layer->position];
        t.bytes = layer->bytes;
        t.load_start = layer->load_start;
        t.load_end = layer->load_end;
        t.unpack_start = layer->unpack_start;
        t.unpack_end = layer->unpack_end;
        r.bytes_read += layer->bytes;
        r.tensors_verified += layer->verified;
        r.tensors_mismatched += layer->mismatched;
        t.compute_start = now();

        // Matmuls go to the NPU-role pool; the CPU-role pool dequantizes the
        // accumulators of each chunk as soon as its matmul lands.
        // Jobs hold the tensors by shared_ptr so an unwinding compute loop
        // cannot free buffers that queued jobs still read.
        const auto tensors =
            std::make_shared<const std::vector<UnpackedTensor>>(std::move(layer->tensors));
        std::vector<std::future<std::int64_t>> results;
        for (const UnpackedTensor& ut : *tensors) {
          auto& slot = activations[ut.rows];
          if (!slot) {
            slot = std::make_shared<const ActivationMatrix>(
                make_activations(config.prompt_length, ut.rows, config.seed));
          }
          const auto x = slot;
          for (std::uint32_t c = 0; c < chunks; ++c) {
            const Eigen::Index r0 = Eigen::Index{c} * config.chunk_length;
            const Eigen::Index r1 =
                std::min<Eigen::Index>(r0 + config.chunk_length, config.prompt_length);
            auto acc = std::make_shared<Eigen::MatrixXi>();
            auto mm = npu_pool.submit([x, tensors, &ut, r0, r1, acc] {
              return int8_matmul_sum(*x, r0, r1, ut.codes, *acc);
            });
            auto shared = mm.share();
            results.push_back(cpu_pool.submit([shared, acc, tensors, &ut] {
              const std::int64_t sum = shared.get();
              const Eigen::MatrixXf y =
                  acc->cast<float>() *
                  Eigen::Map<const Eigen::VectorXf>(ut.scales.data(),
                                                    static_cast<Eigen::Index>(ut.scales.size()))
                      .asDiagonal();
              // Keep the float path observable so it is not optimized away.
              return sum + (std::isfinite(y.sum()) ? 0 : 1);
            }));
          }
        }
        for (auto& f : results) r.output_checksum += f.get();
        t.compute_end = now();
      }
    } catch (...) {
      record_error(std::current_exception());
    }
    join_all();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (const LayerTiming& t : r.layers) {
    r.load_total += t.load_end - t.load_start;
    r.unpack_total += t.unpack_end - t.unpack_start;
    r.compute_total += t.compute_end - t.compute_start;
    r.ttft = std::max(r.ttft, t.compute_end);
  }
  return r;
}

}  // namespace

ColdStartReport run_coldstart(const ColdStartConfig& config) {
  config.validate();
  return config.mode == ExecMode::kSimulated ? run_simulated(config) : run_real(config);
}

}  // namespace coldpack
