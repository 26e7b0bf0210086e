// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// NPU-aware adaptive per-channel quantization.
//
// Weights are quantized statically, uniformly and symmetrically with one
// scale per output channel (column of a D x C tensor); activations get one
// static scale per tensor. Channels receive different bit-widths in [1, 8]
// chosen greedily against a closed-form relative-error estimate
//
//   RE(W_i, B) = (max|W_i|)^2 / (E[W_i^2] * 4^B)
//
// under the budget sum(B_i) <= floor(C * avg_bits).

#ifndef COLDPACK_QUANT_HPP
#define COLDPACK_QUANT_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coldpack/error.hpp"
#include "coldpack/model.hpp"
#include "coldpack/pack.hpp"

namespace coldpack {

struct TensorArchive;

namespace quant {

inline constexpr double kActivationEpsilon = 1e-8;

struct ChannelStats {
  double max_abs = 0.0;
  double mean_sq = 0.0;
  double mean_abs = 0.0;
  std::size_t dim = 0;

  // max_abs^2 / mean_sq; 0 for an all-zero channel.
  double k_ratio() const { return mean_sq > 0.0 ? max_abs * max_abs / mean_sq : 0.0; }
};

template <class Derived>
ChannelStats channel_stats(const Eigen::DenseBase<Derived>& channel) {
  if (channel.size() == 0) fail(ErrorCode::kEmptyInput, "channel is empty");
  const auto v = channel.derived().template cast<double>().array();
  ChannelStats s;
  s.dim = static_cast<std::size_t>(channel.size());
  s.max_abs = v.abs().maxCoeff();
  s.mean_sq = v.square().mean();
  s.mean_abs = v.abs().mean();
  return s;
}

double relative_error(const ChannelStats& stats, int bits);

// Channel-order sum of relative_error.
double total_relative_error(std::span<const ChannelStats> stats,
                            std::span<const int> bits);

struct BitAllocation {
  std::vector<int> bits;
  std::size_t budget_total = 0;
  std::size_t bits_used = 0;
};

// floor(channels * avg_bits).
std::size_t bit_budget(std::size_t channels, double avg_bits);

// Greedy max-heap allocation: start at 1 bit, repeatedly grant one bit to the
// channel with the largest RE(B) - RE(B+1), ties to the lower channel index.
BitAllocation allocate_bits(std::span<const ChannelStats> stats,
                            std::size_t budget);

// Exact minimizer by dynamic programming over (channel, bits used). Test
// oracle; limited to 64 channels.
BitAllocation allocate_bits_exhaustive(std::span<const ChannelStats> stats,
                                       std::size_t budget);

struct QuantizedChannel {
  std::vector<std::int8_t> codes;
  double scale = 1.0;
  int bits = 8;
};

inline int max_code(int bits) { return bits == 1 ? 1 : (1 << (bits - 1)) - 1; }

template <class Derived>
QuantizedChannel quantize_channel(const Eigen::DenseBase<Derived>& channel,
                                  int bits) {
  if (bits < 1 || bits > 8) {
    fail(ErrorCode::kInvalidArgument, "bit-width out of range [1, 8]");
  }
  const Eigen::ArrayXd v = channel.derived().template cast<double>().array();
  if (!v.allFinite()) fail(ErrorCode::kNonFinite, "channel has non-finite values");

  QuantizedChannel q;
  q.bits = bits;
  q.codes.resize(static_cast<std::size_t>(v.size()));
  if (bits == 1) {
    const double mean_abs = v.size() > 0 ? v.abs().mean() : 0.0;
    q.scale = mean_abs > 0.0 ? mean_abs : 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      q.codes[static_cast<std::size_t>(i)] = v[i] < 0.0 ? -1 : 1;
    }
    return q;
  }
  const int limit = max_code(bits);
  const double max_abs = v.size() > 0 ? v.abs().maxCoeff() : 0.0;
  q.scale = max_abs > 0.0 ? max_abs / limit : 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    // nearbyint under the default rounding mode rounds half to even.
    const double r = std::nearbyint(v[i] / q.scale);
    q.codes[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(
        std::clamp(r, -static_cast<double>(limit), static_cast<double>(limit)));
  }
  return q;
}

Eigen::VectorXd dequantize_channel(const QuantizedChannel& qc);

// 1 - cos(w, dequantize(quantize(w, bits))); 0 for a zero channel.
template <class Derived>
double exact_relative_error(const Eigen::DenseBase<Derived>& channel, int bits) {
  const Eigen::VectorXd w = channel.derived().template cast<double>();
  const double wn = w.norm();
  if (wn == 0.0) return 0.0;
  const Eigen::VectorXd wq = dequantize_channel(quantize_channel(w, bits));
  const double qn = wq.norm();
  if (qn == 0.0) return 1.0;
  return 1.0 - w.dot(wq) / (wn * qn);
}

template <class Scalar>
struct SmoothingVectors {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector s_in;   // D
  Vector s_out;  // C
  double alpha = 0.0;
  double beta = 1.0;
};

// W' = diag(s_in^alpha) * W * diag(s_out^-beta).
template <class Derived, class Scalar>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
smooth_tensor(const Eigen::MatrixBase<Derived>& w,
              const SmoothingVectors<Scalar>& sv) {
  using T = typename Derived::Scalar;
  if (sv.s_in.size() != w.rows() || sv.s_out.size() != w.cols()) {
    fail(ErrorCode::kDimensionMismatch, "smoothing vectors do not match D x C");
  }
  if (!((sv.s_in.array() > Scalar(0)).all() && (sv.s_out.array() > Scalar(0)).all())) {
    fail(ErrorCode::kInvalidArgument, "smoothing entries must be positive");
  }
  const Eigen::Matrix<T, Eigen::Dynamic, 1> left =
      sv.s_in.template cast<T>().array().pow(T(sv.alpha));
  const Eigen::Matrix<T, Eigen::Dynamic, 1> right =
      sv.s_out.template cast<T>().array().pow(T(-sv.beta));
  return left.asDiagonal() * w.derived() * right.asDiagonal();
}

struct ActivationProfile {
  Eigen::VectorXd s_in;  // per-input-channel max |I_j|, clamped to epsilon
  double per_tensor_scale = 0.0;  // global max |I| / 127
};

// calib holds one D-dimensional sample per row.
ActivationProfile profile_activation_stats(const Eigen::MatrixXd& calib);

// Per-output-channel max |calib * W|; zero channels map to 1.
Eigen::VectorXd profile_output_stats(const Eigen::MatrixXd& calib,
                                     const Eigen::MatrixXd& w);

// Static per-tensor symmetric INT8 fake-quantization.
Eigen::MatrixXd fake_quantize_per_tensor(const Eigen::MatrixXd& x, double scale);

struct QuantConfig {
  double avg_bits = 5.0;
  std::optional<double> alpha;  // fixed smoothing strength; grid-searched if unset
  double beta = 1.0;
  double alpha_grid_step = 0.05;
  int register_width = pack::kDefaultRegisterWidth;
  bool smoothing = false;

  void validate() const;
};

QuantConfig quant_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const QuantConfig& config);

// {0, step, 2*step, ..., 1}.
std::vector<double> alpha_grid(double step);

// Output MSE between calib * W and the simulated NPU product (smoothed,
// per-tensor INT8 activations times per-channel mixed-precision weights).
double smoothing_error(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                       const QuantConfig& config, double alpha);

struct AlphaSearch {
  double alpha = 0.0;
  std::vector<double> grid;
  std::vector<double> errors;
};

AlphaSearch search_alpha(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                         const QuantConfig& config);
// Grid point with minimum smoothing_error, ties to the smaller alpha.
double calibrate_alpha(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                       const QuantConfig& config);

// One tensor before packing.
struct QuantizedTensor {
  CodeMatrix codes;  // D x C
  std::vector<float> scales;
  BitAllocation allocation;
  std::optional<StoredSmoothing> smoothing;
  float activation_scale = 0.0f;

  Eigen::MatrixXf dequantized() const {
    return pack::dequantize_codes(codes, scales);
  }
};

QuantizedTensor quantize_tensor(const Eigen::MatrixXd& w,
                                const QuantConfig& config,
                                const Eigen::MatrixXd* calib = nullptr);

// Calibration samples keyed by tensor name.
using CalibrationSet = std::map<std::string, Eigen::MatrixXd>;

QuantizedPackedModel quantize_model(const TensorArchive& archive,
                                    const QuantConfig& config,
                                    const CalibrationSet* calib = nullptr);

// Per-tensor and whole-model bit-width histograms.
nlohmann::json allocation_report(const QuantizedPackedModel& model);

}  // namespace quant
}  // namespace coldpack

#endif  // COLDPACK_QUANT_HPP
