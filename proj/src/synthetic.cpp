// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "coldpack/coldstart.hpp"
#include "coldpack/error.hpp"
#include "coldpack/quant.hpp"

namespace coldpack {
namespace {

constexpr std::array<const char*, 7> kTensorNames = {
    "q_proj", "k_proj", "v_proj", "o_proj", "gate_proj", "up_proj", "down_proj"};

// mt19937_64 with explicit uniform/normal transforms; the standard
// distributions are implementation-defined, which would break cross-platform
// byte identity of generated files.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

void SyntheticModelSpec::validate() const {
  if (layers == 0 || rows == 0 || cols == 0 || tensors_per_layer == 0) {
    fail(ErrorCode::kInvalidArgument, "synthetic model dimensions must be positive");
  }
  if (tensors_per_layer > kTensorNames.size()) {
    fail(ErrorCode::kInvalidArgument, "at most 7 tensors per layer");
  }
  pack::check_register_width(register_width);
}

SyntheticModel generate_synthetic_model(const SyntheticModelSpec& spec) {
  spec.validate();
  SyntheticModel out;
  Rng rng(spec.seed);
  for (std::uint32_t l = 0; l < spec.layers; ++l) {
    for (std::uint32_t t = 0; t < spec.tensors_per_layer; ++t) {
      Eigen::MatrixXf w(spec.rows, spec.cols);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        // Channel scale spread and a per-channel outlier rate make the
        // max/RMS ratio vary across channels.
        const double sigma = 0.02 * std::exp(0.5 * rng.normal());
        const double outlier_rate = 0.02 * rng.uniform();
        for (Eigen::Index d = 0; d < w.rows(); ++d) {
          double v = sigma * rng.normal();
          if (rng.uniform() < outlier_rate) v *= 4.0 + 6.0 * rng.uniform();
          w(d, c) = static_cast<float>(v);
        }
      }
      out.archive.add("layers." + std::to_string(l) + "." + kTensorNames[t], l, w,
                      spec.dtype);
    }
  }
  quant::QuantConfig config;
  config.avg_bits = spec.avg_bits;
  config.register_width = spec.register_width;
  out.packed = quant::quantize_model(out.archive, config);
  return out;
}

std::map<std::string, Eigen::MatrixXf> dequantized_weights(
    const QuantizedPackedModel& model) {
  std::map<std::string, Eigen::MatrixXf> out;
  for (const PackedTensorRecord& rec : model.tensors) {
    out.emplace(rec.name, pack::dequantize_codes(pack::unpack_tensor(
                                                     rec.packed, pack::UnpackKernel::kReference),
                                                 rec.packed.scales));
  }
  return out;
}

}  // namespace coldpack
