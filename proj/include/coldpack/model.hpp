// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef COLDPACK_MODEL_HPP
#define COLDPACK_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coldpack/pack.hpp"

namespace coldpack {

// Static smoothing applied before quantization; W' = diag(s_in^alpha) W
// diag(s_out^-beta). Stored so a runtime can rescale inputs and outputs.
struct StoredSmoothing {
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<float> s_in;   // D
  std::vector<float> s_out;  // C

  bool operator==(const StoredSmoothing&) const = default;
};

struct PackedTensorRecord {
  std::string name;
  std::uint32_t layer = 0;
  pack::PackedTensor packed;
  std::optional<StoredSmoothing> smoothing;
  // Static per-tensor INT8 scale for the (smoothed) input activation; 0 when
  // no calibration data was available.
  float activation_scale = 0.0f;

  bool operator==(const PackedTensorRecord&) const = default;
};

// What an EFPK file holds. Tensors are ordered by non-decreasing layer id.
struct QuantizedPackedModel {
  std::uint32_t register_width = pack::kDefaultRegisterWidth;
  std::vector<PackedTensorRecord> tensors;

  std::vector<std::uint32_t> layer_ids() const;
  std::uint64_t block_bytes() const;

  // Structural validation, including the static/symmetric/per-channel weight
  // and per-tensor activation quantization constraints.
  void validate() const;

  bool operator==(const QuantizedPackedModel&) const = default;
};

}  // namespace coldpack

#endif  // COLDPACK_MODEL_HPP
