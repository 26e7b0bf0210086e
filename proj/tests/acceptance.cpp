// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "coldpack/coldstart.hpp"
#include "coldpack/error.hpp"
#include "coldpack/pack.hpp"
#include "coldpack/pipeline.hpp"
#include "coldpack/quant.hpp"
#include "coldpack/tensorstore.hpp"
#include "test_util.hpp"

namespace coldpack {
namespace {

using Clock = std::chrono::steady_clock;

struct Result {
  bool pass = true;
  std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const std::function<Result()>& body) {
  const auto t0 = Clock::now();
  Result r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!r.pass) ++g_failures;
  std::printf("[%s] %d %s: %s (%.2fs)\n", r.pass ? "PASS" : "FAIL", id, name, r.detail.c_str(),
              secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- criteria 1 and 2: packing --------------------------------------------

struct PackCase {
  int bits;
  int register_width;
  std::vector<std::uint8_t> u;
};

std::vector<PackCase> pack_suite() {
  std::vector<PackCase> cases;
  std::mt19937_64 rng(2026);
  const int widths[] = {8, 16, 32, 64, 128};
  for (int i = 0; i < 10'000; ++i) {
    PackCase c;
    c.bits = 1 + static_cast<int>(rng() % 8);
    c.register_width = widths[rng() % 5];
    const std::size_t n = static_cast<std::size_t>(c.register_width) * (1 + rng() % 4);
    c.u.resize(n);
    for (auto& v : c.u) v = static_cast<std::uint8_t>(rng() >> (64 - c.bits));
    cases.push_back(std::move(c));
  }
  // R = 8, W <= 4: every code in every lane, and every pair of codes in every
  // pair of lanes. W <= 2 additionally enumerates every whole group.
  for (int bits = 1; bits <= 4; ++bits) {
    const int levels = 1 << bits;
    for (int i = 0; i < 8; ++i) {
      for (int j = i + 1; j < 8; ++j) {
        for (int a = 0; a < levels; ++a) {
          for (int b = 0; b < levels; ++b) {
            PackCase c{bits, 8, std::vector<std::uint8_t>(8)};
            for (int k = 0; k < 8; ++k) c.u[k] = static_cast<std::uint8_t>((a + b + k) % levels);
            c.u[i] = static_cast<std::uint8_t>(a);
            c.u[j] = static_cast<std::uint8_t>(b);
            cases.push_back(std::move(c));
          }
        }
      }
    }
    if (bits <= 2) {
      const int groups = 1 << (8 * bits);
      PackCase c{bits, 8, std::vector<std::uint8_t>(static_cast<std::size_t>(groups) * 8)};
      for (int g = 0; g < groups; ++g) {
        for (int k = 0; k < 8; ++k) {
          c.u[g * 8 + k] = static_cast<std::uint8_t>((g >> (k * bits)) & (levels - 1));
        }
      }
      cases.push_back(std::move(c));
    }
  }
  return cases;
}

std::vector<std::int8_t> decoded(const PackCase& c) {
  std::vector<std::int8_t> q(c.u.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = static_cast<std::int8_t>(pack::decode_offset(c.u[i], c.bits));
  }
  return q;
}

Result criterion_roundtrip(const std::vector<PackCase>& suite) {
  const auto t0 = Clock::now();
  std::size_t bad = 0;
  for (const PackCase& c : suite) {
    const auto blocks = pack::pack_channel(c.u, c.bits, c.register_width);
    if (pack::unpack_channel_reference(blocks, c.bits, c.register_width) != decoded(c)) ++bad;
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Result r;
  r.pass = bad == 0 && secs < 30.0;
  r.detail = std::to_string(suite.size()) + " cases, " + std::to_string(bad) +
             " mismatches, runtime " + fmt("%.2fs (limit 30s)", secs);
  return r;
}

Result criterion_simd(const std::vector<PackCase>& suite) {
  std::size_t bad = 0;
  for (const PackCase& c : suite) {
    const auto blocks = pack::pack_channel(c.u, c.bits, c.register_width);
    if (pack::unpack_channel_simd(blocks, c.bits, c.register_width) !=
        pack::unpack_channel_reference(blocks, c.bits, c.register_width)) {
      ++bad;
    }
  }
  const std::vector<std::uint8_t> fixture_u = {5, 2, 7, 1, 4, 6, 3, 5};
  const std::vector<std::uint8_t> fixture_bytes = {0x6D, 0x2D, 0xAD};
  const std::vector<std::int8_t> fixture_q = {1, -2, 3, -3, 0, 2, -1, 1};
  const bool bytes_ok = pack::pack_channel(fixture_u, 3, 8) == fixture_bytes;
  const bool q_ok = pack::unpack_channel_simd(fixture_bytes, 3, 8) == fixture_q &&
                    pack::unpack_channel_reference(fixture_bytes, 3, 8) == fixture_q;
  const auto program = pack::build_unpack_program(3);
  std::vector<int> shifts;
  for (const auto& step : program[0].steps) shifts.push_back(step.shift);
  std::sort(shifts.begin(), shifts.end());
  const bool shifts_ok = shifts == std::vector<int>{5, 6};

  Result r;
  r.pass = bad == 0 && bytes_ok && q_ok && shifts_ok;
  r.detail = std::to_string(bad) + " SIMD/reference mismatches over " +
             std::to_string(suite.size()) + " cases; 3-bit fixture bytes " + (bytes_ok ? "ok" : "WRONG") +
             ", codes " + (q_ok ? "ok" : "WRONG") + ", W=3 stripe-0 shifts " +
             (shifts_ok ? "{5,6}" : "WRONG");
  return r;
}

// ---- criterion 3: allocation optimality ------------------------------------

quant::ChannelStats random_stats(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd v(64);
  const double sigma = std::exp(n(rng));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigma * n(rng);
  const int outliers = static_cast<int>(u(rng) * 4);
  for (int k = 0; k < outliers; ++k) v[static_cast<Eigen::Index>(rng() % 64)] *= 2.0 + 20.0 * u(rng);
  return quant::channel_stats(v);
}

Result criterion_allocation() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  int bad = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t c = 1 + rng() % 6;
    std::vector<quant::ChannelStats> stats;
    for (std::size_t i = 0; i < c; ++i) stats.push_back(random_stats(rng));
    const std::size_t budget = c + rng() % (7 * c + 1);
    const auto greedy = quant::allocate_bits(stats, budget);
    const auto dp = quant::allocate_bits_exhaustive(stats, budget);
    if (quant::total_relative_error(stats, greedy.bits) !=
        quant::total_relative_error(stats, dp.bits)) {
      ++bad;
    }
  }
  // K = max^2 / mean_sq of {2, 0, 0, 0} is 4; {1, 1, 1, 1} gives 1.
  std::vector<quant::ChannelStats> hand = {
      quant::channel_stats(Eigen::Vector4d(2, 0, 0, 0)),
      quant::channel_stats(Eigen::Vector4d(1, 1, 1, 1))};
  const bool hand_ok = quant::allocate_bits(hand, 6).bits == std::vector<int>{4, 2};
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Result r;
  r.pass = bad == 0 && hand_ok && secs < 10.0;
  r.detail = std::to_string(bad) + "/500 instances differ from the DP optimum; K=[4,1] budget 6 -> " +
             (hand_ok ? "[4,2]" : "WRONG") + fmt("; runtime %.2fs (limit 10s)", secs);
  return r;
}

// ---- criterion 4: RE metric fidelity ---------------------------------------

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Result criterion_re_fidelity() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Eigen::VectorXd> channels;
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd v(512);
    const double sigma = 0.02 * std::exp(0.5 * n(rng));
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = sigma * n(rng);
    channels.push_back(std::move(v));
  }
  Result r;
  double worst = 1.0;
  std::size_t bound_violations = 0;
  std::string per_bits;
  for (int bits = 2; bits <= 8; ++bits) {
    std::vector<double> proxy, exact;
    for (const auto& v : channels) {
      proxy.push_back(quant::relative_error(quant::channel_stats(v), bits));
      exact.push_back(quant::exact_relative_error(v, bits));
      const auto q = quant::quantize_channel(v, bits);
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        const double err = std::abs(v[k] - q.codes[static_cast<std::size_t>(k)] * q.scale);
        if (err > q.scale / 2 * (1 + 1e-12)) ++bound_violations;
      }
    }
    const double rho = spearman(proxy, exact);
    worst = std::min(worst, rho);
    per_bits += fmt(bits == 2 ? "%.3f" : ",%.3f", rho);
  }
  r.pass = worst >= 0.8 && bound_violations == 0;
  r.detail = "spearman B=2..8 [" + per_bits + "], min " + fmt("%.3f (>= 0.8)", worst) + "; " +
             std::to_string(bound_violations) + " elements outside |w-qS| <= S/2";
  return r;
}

// ---- criterion 5: smoothing exactness --------------------------------------

Result criterion_smoothing() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index samples = 4 + static_cast<Eigen::Index>(rng() % 12);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 30);
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng() % 20);
    Eigen::MatrixXd x(samples, d), w(d, c);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double col_scale = std::exp(2.0 * n(rng));
      for (Eigen::Index s = 0; s < samples; ++s) x(s, j) = col_scale * n(rng);
    }
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.05 * n(rng);
    quant::SmoothingVectors<double> sv;
    sv.s_in = quant::profile_activation_stats(x).s_in;
    sv.s_out = quant::profile_output_stats(x, w);
    sv.alpha = u(rng);
    sv.beta = 1.0;
    const Eigen::MatrixXd ws = quant::smooth_tensor(w, sv);
    const Eigen::VectorXd in_div = sv.s_in.array().pow(-sv.alpha);
    const Eigen::VectorXd out_mul = sv.s_out.array().pow(sv.beta);
    const Eigen::MatrixXd smoothed = (x * in_div.asDiagonal()) * ws * out_mul.asDiagonal();
    const Eigen::MatrixXd plain = x * w;
    worst = std::max(worst, (smoothed - plain).norm() / plain.norm());
  }

  // calibrate_alpha against an exhaustive evaluation of every grid point.
  int grid_bad = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd x(24, 16), w(16, 8);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double col_scale = (j % 5 == 0) ? 20.0 : 1.0;
      for (Eigen::Index s = 0; s < x.rows(); ++s) x(s, j) = col_scale * n(rng);
    }
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.1 * n(rng);
    quant::QuantConfig config;
    config.avg_bits = 3.0 + trial * 0.5;
    config.smoothing = true;
    config.alpha_grid_step = 0.05;
    const double chosen = quant::calibrate_alpha(w, x, config);
    double best_alpha = 0.0, best = INFINITY;
    for (int k = 0; k <= 20; ++k) {
      const double a = k * 0.05;
      const double e = quant::smoothing_error(w, x, config, a);
      if (e < best) {
        best = e;
        best_alpha = a;
      }
    }
    if (std::abs(chosen - best_alpha) > 1e-12) ++grid_bad;
  }
  Result r;
  r.pass = worst <= 1e-4 && grid_bad == 0;
  r.detail = fmt("max relative Frobenius difference %.3g over 100 triples (<= 1e-4); ", worst) +
             std::to_string(grid_bad) + "/5 calibrations off the grid minimum";
  return r;
}

// ---- criterion 6: compactness ----------------------------------------------

Result criterion_compactness() {
  struct Case {
    std::uint32_t rows, cols;
    double avg_bits;
    int register_width;
  };
  const Case cases[] = {{200, 64, 5.0, 128}, {100, 40, 4.5, 64},  {96, 36, 3.25, 32},
                        {77, 50, 6.0, 16},   {130, 24, 2.5, 128}, {64, 16, 7.75, 8}};
  std::size_t tensors = 0, size_bad = 0, mean_bad = 0, file_bad = 0;
  std::uint64_t seed = 1;
  testing::TempDir dir("acceptance_compact");
  for (const Case& c : cases) {
    SyntheticModelSpec spec;
    spec.layers = 2;
    spec.rows = c.rows;
    spec.cols = c.cols;
    spec.tensors_per_layer = 3;
    spec.avg_bits = c.avg_bits;
    spec.register_width = c.register_width;
    spec.seed = seed++;
    const auto m = generate_synthetic_model(spec);
    const std::uint64_t padded =
        (c.rows + c.register_width - 1) / c.register_width * static_cast<std::uint64_t>(c.register_width);
    std::uint64_t expected_model = 0;
    for (const auto& t : m.packed.tensors) {
      ++tensors;
      std::uint64_t bits = 0;
      for (int b : t.packed.channel_bits) bits += static_cast<std::uint64_t>(b);
      const std::uint64_t expected = padded * bits / 8;
      expected_model += expected;
      if (t.packed.blocks.size() != expected) ++size_bad;
      const double mean = static_cast<double>(bits) / c.cols;
      if (bits != static_cast<std::uint64_t>(std::floor(c.cols * c.avg_bits)) || mean != c.avg_bits) {
        ++mean_bad;
      }
    }
    // Block bytes inside the written file match as well.
    write_efpk(m.packed, dir / "m.efpk");
    const auto reader = EfpkReader::open(dir / "m.efpk");
    std::uint64_t on_disk = 0;
    for (const auto& d : reader.descriptors()) on_disk += d.blocks_size;
    if (on_disk != expected_model) ++file_bad;
  }
  Result r;
  r.pass = size_bad == 0 && mean_bad == 0 && file_bad == 0;
  r.detail = std::to_string(tensors) + " tensors: " + std::to_string(size_bad) +
             " block-size mismatches, " + std::to_string(mean_bad) + " mean-bit mismatches, " +
             std::to_string(file_bad) + " on-disk mismatches";
  return r;
}

// ---- criterion 7: scheduler ladder -----------------------------------------

Result criterion_ladder() {
  const auto t0 = Clock::now();
  std::ifstream in(std::string(COLDPACK_SOURCE_DIR) + "/data/scenarios/chunked_prefill.json");
  const pipeline::Scenario scenario = pipeline::scenario_from_json(nlohmann::json::parse(in));
  std::vector<pipeline::PolicyRun> runs;
  for (pipeline::SchedPolicy p : pipeline::kPolicyLadder) runs.push_back(pipeline::run_policy(scenario, p));
  using pipeline::Device;
  const auto npu = [&](std::size_t i) { return pipeline::bubble_rate(runs[i].timeline, Device::kNpu).rate; };
  const auto cpu = [&](std::size_t i) { return pipeline::bubble_rate(runs[i].timeline, Device::kCpu).rate; };
  const bool npu_ok = npu(2) < npu(1);
  const bool cpu_ok = cpu(3) < cpu(2);
  bool makespan_ok = true;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    makespan_ok = makespan_ok && runs[i].timeline.makespan <= runs[i - 1].timeline.makespan;
  }
  bool guard_ok = true;
  std::size_t steals = 0;
  for (const auto& run : runs) {
    for (const auto& s : run.timeline.steals) {
      ++steals;
      guard_ok = guard_ok && s.npu_queue_length > scenario.steal_threshold;
    }
  }
  bool deterministic = true;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto again = pipeline::run_policy(scenario, pipeline::kPolicyLadder[i]);
    deterministic = deterministic && pipeline::timeline_to_csv(again.timeline, again.graph) ==
                                         pipeline::timeline_to_csv(runs[i].timeline, runs[i].graph);
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  Result r;
  r.pass = npu_ok && cpu_ok && makespan_ok && guard_ok && deterministic &&
           scenario.steal_threshold == 5 && secs < 5.0;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "makespan %.2f/%.2f/%.2f/%.2f, npu bubble fine %.3f > priority %.3f, cpu bubble "
                "priority %.3f > stealing %.3f, %zu steals all with queue > %u, %s, runtime %.2fs",
                runs[0].timeline.makespan, runs[1].timeline.makespan, runs[2].timeline.makespan,
                runs[3].timeline.makespan, npu(1), npu(2), cpu(2), cpu(3), steals,
                scenario.steal_threshold, deterministic ? "deterministic" : "NOT deterministic", secs);
  r.detail = buf;
  return r;
}

// ---- criterion 8: cold-start pipelining ------------------------------------

Result criterion_coldstart() {
  const StageSchedule fixture{{2, 2, 2, 2}, {1, 1, 1, 1}, {3, 3, 3, 3}};
  const double ttft = simulate_stage_pipeline(fixture, 2, 1, 2).ttft;

  testing::TempDir dir("acceptance_coldstart");
  SyntheticModelSpec spec;
  spec.layers = 3;
  spec.rows = 1024;
  spec.cols = 1024;
  spec.tensors_per_layer = 4;
  spec.avg_bits = 5.0;
  spec.seed = 99;
  const auto m = generate_synthetic_model(spec);
  write_tensor_archive(m.archive, dir / "model.cpta");
  write_efpk(m.packed, dir / "model.efpk");
  const auto model_bytes = std::filesystem::file_size(dir / "model.cpta");

  // Dequantized weights from the pre-pack quantization of the source archive.
  quant::QuantConfig qc;
  qc.avg_bits = spec.avg_bits;
  qc.register_width = spec.register_width;
  auto expected = std::make_shared<std::map<std::string, Eigen::MatrixXf>>();
  for (const ArchiveTensor& t : m.archive.tensors) {
    (*expected)[t.name] = quant::quantize_tensor(t.values().cast<double>(), qc).dequantized();
  }
  ColdStartConfig config;
  config.efpk = dir / "model.efpk";
  config.mode = ExecMode::kReal;
  config.prompt_length = 32;
  config.chunk_length = 16;
  config.expected = expected;
  const ColdStartReport real = run_coldstart(config);

  Result r;
  r.pass = ttft == 15.0 && model_bytes <= 100u * 1024u * 1024u && real.overlap_ratio() > 0.0 &&
           real.tensors_verified == m.archive.tensors.size() && real.tensors_mismatched == 0;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "simulated TTFT %.6g (expect 15); real mode on %.1f MB model: ttft %.3fs, stage "
                "sum %.3fs, overlap %.3f, %zu/%zu tensors equal after dequantization",
                ttft, static_cast<double>(model_bytes) / (1024.0 * 1024.0), real.ttft,
                real.stage_sum(), real.overlap_ratio(),
                real.tensors_verified - real.tensors_mismatched, m.archive.tensors.size());
  r.detail = buf;
  return r;
}

// ---- criterion 9: instruction estimate -------------------------------------

Result criterion_instructions() {
  const double w3 = pack::unpack_instruction_estimate(3);
  const double w5 = pack::unpack_instruction_estimate(5);
  const double w7 = pack::unpack_instruction_estimate(7);
  SyntheticModelSpec spec;
  spec.layers = 2;
  spec.seed = 3;
  const auto m = generate_synthetic_model(spec);
  std::vector<std::uint64_t> histogram(8, 0);
  for (const auto& t : m.packed.tensors) {
    for (int b : t.packed.channel_bits) histogram[b - 1] += t.packed.rows;
  }
  const double mixed = pack::mixed_instruction_estimate(histogram);
  Result r;
  r.pass = w3 == 0.375 && w5 == 0.375 && w7 == 0.5625;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "W=3 %.4f, W=5 %.4f, W=7 %.4f; mix-weighted average %.4f on a B_e=5 synthetic "
                "model (informational)",
                w3, w5, w7, mixed);
  r.detail = buf;
  return r;
}

}  // namespace
}  // namespace coldpack

int main() {
  using namespace coldpack;
  const auto suite = pack_suite();
  report(1, "packing roundtrip", [&] { return criterion_roundtrip(suite); });
  report(2, "SIMD/reference equivalence", [&] { return criterion_simd(suite); });
  report(3, "allocation optimality", criterion_allocation);
  report(4, "RE metric fidelity", criterion_re_fidelity);
  report(5, "smoothing exactness", criterion_smoothing);
  report(6, "compactness", criterion_compactness);
  report(7, "scheduler ladder", criterion_ladder);
  report(8, "cold-start pipelining", criterion_coldstart);
  report(9, "instruction estimate", criterion_instructions);
  std::printf("%d of 9 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
