// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/quant.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "coldpack/error.hpp"
#include "coldpack/tensorstore.hpp"

namespace coldpack::quant {
namespace {

ChannelStats stats_with_k(double k) {
  // mean_sq = 1, so k_ratio == max_abs^2 == k.
  ChannelStats s;
  s.max_abs = std::sqrt(k);
  s.mean_sq = 1.0;
  s.mean_abs = 1.0;
  s.dim = 1;
  return s;
}

// Same closed form as the oracle in tests/oracles/quant_oracle.py.
Eigen::MatrixXd fixture_weights(int d, int c) {
  Eigen::MatrixXd w(d, c);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < c; ++j) w(i, j) = std::sin(0.7 * i + 1.3 * j) * (1.0 + 0.5 * j) * 0.1;
  }
  return w;
}

Eigen::MatrixXd fixture_inputs(int n, int d) {
  Eigen::MatrixXd x(n, d);
  for (int r = 0; r < n; ++r) {
    for (int k = 0; k < d; ++k) {
      x(r, k) = std::cos(0.37 * r + 0.91 * k) * (1.0 + 4.0 * (k % 3 == 0));
    }
  }
  return x;
}

TEST(ChannelStats, Basic) {
  const Eigen::Vector4d ch(0.1, 0.9, -0.5, 0.3);
  const auto s = channel_stats(ch);
  EXPECT_DOUBLE_EQ(s.max_abs, 0.9);
  EXPECT_NEAR(s.mean_sq, 0.29, 1e-15);
  EXPECT_NEAR(s.mean_abs, 0.45, 1e-15);
  EXPECT_THROW(channel_stats(Eigen::VectorXd()), Error);
}

TEST(RelativeError, FrozenFixture) {
  const Eigen::Vector4d ch(0.1, 0.9, -0.5, 0.3);
  // numpy oracle: tests/oracles/quant_oracle.py
  EXPECT_NEAR(relative_error(channel_stats(ch), 3), 0.043642241379310345, 1e-15);
  EXPECT_NEAR(exact_relative_error(ch, 3), 0.0074166660290697628, 1e-12);
  const auto q = quantize_channel(ch, 3);
  EXPECT_EQ(q.codes, (std::vector<std::int8_t>{0, 3, -2, 1}));
  EXPECT_NEAR(q.scale, 0.3, 1e-15);
}

TEST(RelativeError, QuartersPerBit) {
  const auto s = stats_with_k(3.0);
  for (int b = 1; b < 8; ++b) {
    EXPECT_EQ(relative_error(s, b), 4.0 * relative_error(s, b + 1));
  }
  EXPECT_EQ(relative_error(ChannelStats{}, 4), 0.0);
  EXPECT_THROW(relative_error(s, 0), Error);
}

TEST(BitBudget, Floor) {
  EXPECT_EQ(bit_budget(10, 4.3), 43u);
  EXPECT_EQ(bit_budget(7, 5.5), 38u);
  EXPECT_EQ(bit_budget(4096, 5.0), 20480u);
  EXPECT_THROW(bit_budget(4, 0.5), Error);
}

TEST(AllocateBits, HandFixture) {
  const std::vector<ChannelStats> s = {stats_with_k(4.0), stats_with_k(1.0)};
  const auto a = allocate_bits(s, 6);
  EXPECT_EQ(a.bits, (std::vector<int>{4, 2}));
  EXPECT_EQ(a.bits_used, 6u);
  // [3,3] ties [4,2] exactly (4/64 + 1/64 = 4/256 + 1/16), so compare totals.
  EXPECT_EQ(total_relative_error(s, allocate_bits_exhaustive(s, 6).bits),
            total_relative_error(s, a.bits));
}

TEST(AllocateBits, InfeasibleAndSaturated) {
  const std::vector<ChannelStats> s = {stats_with_k(2.0), stats_with_k(5.0), stats_with_k(1.5)};
  EXPECT_THROW(allocate_bits(s, 2), Error);
  const auto a = allocate_bits(s, 100);
  EXPECT_EQ(a.bits, (std::vector<int>{8, 8, 8}));
  EXPECT_EQ(allocate_bits(s, 3).bits, (std::vector<int>{1, 1, 1}));
}

TEST(AllocateBits, GreedyEqualsDynamicProgramming) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> kdist(1.0, 40.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 1 + rng() % 6;
    std::vector<ChannelStats> s;
    for (std::size_t i = 0; i < c; ++i) s.push_back(stats_with_k(kdist(rng)));
    const std::size_t budget = c + rng() % (7 * c + 1);
    const auto g = allocate_bits(s, budget);
    const auto dp = allocate_bits_exhaustive(s, budget);
    EXPECT_EQ(total_relative_error(s, g.bits), total_relative_error(s, dp.bits))
        << "trial " << trial;
    EXPECT_LE(g.bits_used, budget);
  }
}

TEST(QuantizeChannel, ErrorBoundAndRange) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int b = 2; b <= 8; ++b) {
    Eigen::VectorXd ch(300);
    for (auto& v : ch) v = nd(rng);
    const auto q = quantize_channel(ch, b);
    for (Eigen::Index i = 0; i < ch.size(); ++i) {
      const int code = q.codes[static_cast<std::size_t>(i)];
      EXPECT_LE(std::abs(code), max_code(b));
      EXPECT_LE(std::abs(ch[i] - code * q.scale), q.scale / 2 * (1 + 1e-12));
    }
  }
}

TEST(QuantizeChannel, SignCodesAndZeroChannel) {
  const Eigen::Vector3d ch(-2.0, 0.5, 1.5);
  const auto q = quantize_channel(ch, 1);
  EXPECT_EQ(q.codes, (std::vector<std::int8_t>{-1, 1, 1}));
  EXPECT_DOUBLE_EQ(q.scale, 4.0 / 3.0);
  const auto z = quantize_channel(Eigen::Vector3d::Zero(), 5);
  EXPECT_EQ(z.scale, 1.0);
  EXPECT_EQ(z.codes, (std::vector<std::int8_t>{0, 0, 0}));
  const Eigen::Vector2d bad(1.0, NAN);
  EXPECT_THROW(quantize_channel(bad, 4), Error);
}

TEST(QuantizeChannel, RoundsHalfToEven) {
  // scale = 3 / 3 = 1 at 3 bits; 0.5 -> 0, 1.5 -> 2, -2.5 -> -2.
  const Eigen::Vector4d ch(3.0, 0.5, 1.5, -2.5);
  const auto q = quantize_channel(ch, 3);
  EXPECT_EQ(q.codes, (std::vector<std::int8_t>{3, 0, 2, -2}));
}

TEST(Smoothing, PreservesProduct) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ad(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd x(12, 9), w(9, 5);
    for (auto& v : x.reshaped()) v = nd(rng);
    for (auto& v : w.reshaped()) v = nd(rng);
    SmoothingVectors<double> sv;
    sv.s_in = profile_activation_stats(x).s_in;
    sv.s_out = profile_output_stats(x, w);
    sv.alpha = ad(rng);
    sv.beta = 1.0;
    const Eigen::MatrixXd ws = smooth_tensor(w, sv);
    const Eigen::VectorXd in_inv = sv.s_in.array().pow(-sv.alpha);
    const Eigen::MatrixXd y = (x * in_inv.asDiagonal()) * ws * sv.s_out.asDiagonal();
    EXPECT_LE((y - x * w).norm() / (x * w).norm(), 1e-12);
  }
}

TEST(Smoothing, RejectsMismatchedVectors) {
  SmoothingVectors<double> sv;
  sv.s_in = Eigen::VectorXd::Ones(3);
  sv.s_out = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(smooth_tensor(Eigen::MatrixXd::Ones(4, 2), sv), Error);
  sv.s_in = Eigen::VectorXd::Zero(4);
  EXPECT_THROW(smooth_tensor(Eigen::MatrixXd::Ones(4, 2), sv), Error);
}

TEST(Profile, ClampsAndScales) {
  Eigen::MatrixXd x(2, 3);
  x << 1.0, 0.0, -3.0, -2.0, 0.0, 0.5;
  const auto p = profile_activation_stats(x);
  EXPECT_DOUBLE_EQ(p.s_in[0], 2.0);
  EXPECT_DOUBLE_EQ(p.s_in[1], kActivationEpsilon);
  EXPECT_DOUBLE_EQ(p.s_in[2], 3.0);
  EXPECT_DOUBLE_EQ(p.per_tensor_scale, 3.0 / 127.0);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 2);
  EXPECT_EQ(profile_output_stats(x, w), Eigen::VectorXd::Ones(2));
}

TEST(Calibration, GridAndFrozenOracle) {
  const auto grid = alpha_grid(0.05);
  ASSERT_EQ(grid.size(), 21u);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  EXPECT_THROW(alpha_grid(0.3), Error);

  const Eigen::MatrixXd w = fixture_weights(8, 6);
  const Eigen::MatrixXd x = fixture_inputs(16, 8);
  QuantConfig config;
  config.avg_bits = 3.0;
  config.alpha_grid_step = 0.1;
  const auto search = search_alpha(w, x, config);
  // Independent numpy reimplementation of the objective.
  const std::vector<double> oracle = {
      0.026262680954783461, 0.017694977571541582, 0.018727775511477099,
      0.018258148915021002, 0.007830973924326275, 0.027040440092828702,
      0.024303934250488102, 0.027281732356487204, 0.021036027751616521,
      0.029116520797010399, 0.041995955664950492};
  ASSERT_EQ(search.errors.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_NEAR(search.errors[i], oracle[i], 1e-9 * oracle[i]) << "alpha " << search.grid[i];
  }
  EXPECT_DOUBLE_EQ(search.alpha, 0.4);
  EXPECT_DOUBLE_EQ(calibrate_alpha(w, x, config), 0.4);
}

TEST(Calibration, ChosenAlphaIsGridMinimum) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  QuantConfig config;
  config.alpha_grid_step = 0.25;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd x(10, 6), w(6, 4);
    for (auto& v : x.reshaped()) v = nd(rng) * (1 + 5 * (rng() % 4 == 0));
    for (auto& v : w.reshaped()) v = nd(rng);
    const double chosen = calibrate_alpha(w, x, config);
    double best = INFINITY, best_alpha = -1;
    for (double a : alpha_grid(0.25)) {
      const double e = smoothing_error(w, x, config, a);
      if (e < best) {
        best = e;
        best_alpha = a;
      }
    }
    EXPECT_EQ(chosen, best_alpha);
  }
}

TEST(QuantConfig, JsonRoundTripAndValidation) {
  QuantConfig c;
  c.avg_bits = 4.5;
  c.alpha = 0.5;
  c.smoothing = true;
  const auto back = quant_config_from_json(to_json(c));
  EXPECT_EQ(back.avg_bits, 4.5);
  EXPECT_EQ(back.alpha, 0.5);
  EXPECT_TRUE(back.smoothing);
  EXPECT_THROW(quant_config_from_json({{"avg_bits", 9.0}}), Error);
  EXPECT_THROW(quant_config_from_json({{"register_width", 24}}), Error);
}

TEST(QuantizeTensor, SmoothingNeedsCalibration) {
  QuantConfig c;
  c.smoothing = true;
  EXPECT_THROW(quantize_tensor(Eigen::MatrixXd::Ones(4, 2), c), Error);
  const Eigen::MatrixXd w = fixture_weights(8, 6);
  const Eigen::MatrixXd x = fixture_inputs(16, 8);
  c.avg_bits = 3.0;
  c.alpha_grid_step = 0.1;
  const auto q = quantize_tensor(w, c, &x);
  ASSERT_TRUE(q.smoothing.has_value());
  EXPECT_DOUBLE_EQ(q.smoothing->alpha, 0.4);
  EXPECT_GT(q.activation_scale, 0.0f);
  c.alpha = 0.7;
  EXPECT_DOUBLE_EQ(quantize_tensor(w, c, &x).smoothing->alpha, 0.7);
}

TEST(QuantizeModel, MeanBitsMatchBudget) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  TensorArchive archive;
  for (int l = 0; l < 2; ++l) {
    Eigen::MatrixXf w(100, 40);
    for (auto& v : w.reshaped()) v = static_cast<float>(nd(rng) * (1 + (rng() % 50 == 0) * 8));
    archive.add("l" + std::to_string(l), static_cast<std::uint32_t>(l), w);
  }
  QuantConfig c;
  c.avg_bits = 4.5;
  const auto model = quantize_model(archive, c);
  ASSERT_EQ(model.tensors.size(), 2u);
  for (const auto& t : model.tensors) {
    int sum = 0;
    for (int b : t.packed.channel_bits) sum += b;
    EXPECT_EQ(sum, 180);
    EXPECT_EQ(t.packed.blocks.size(), t.packed.expected_block_bytes());
  }
  const auto report = allocation_report(model);
  EXPECT_DOUBLE_EQ(report["mean_bits"].get<double>(), 4.5);
}

}  // namespace
}  // namespace coldpack::quant
