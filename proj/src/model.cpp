// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/model.hpp"

#include <cmath>
#include <set>

#include "coldpack/error.hpp"

namespace coldpack {

std::vector<std::uint32_t> QuantizedPackedModel::layer_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& t : tensors) {
    if (ids.empty() || ids.back() != t.layer) ids.push_back(t.layer);
  }
  return ids;
}

std::uint64_t QuantizedPackedModel::block_bytes() const {
  std::uint64_t total = 0;
  for (const auto& t : tensors) total += t.packed.blocks.size();
  return total;
}

void QuantizedPackedModel::validate() const {
  pack::check_register_width(static_cast<int>(register_width));
  std::set<std::string> names;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (!names.insert(t.name).second) {
      fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + t.name);
    }
    if (i > 0 && tensors[i - 1].layer > t.layer) {
      fail(ErrorCode::kOutOfOrder,
           "tensor " + t.name + " breaks ascending layer order");
    }
    if (t.packed.register_width != register_width) {
      fail(ErrorCode::kCorrupt,
           "tensor " + t.name + " packed with a different register width");
    }
    t.packed.validate();
    for (float s : t.packed.scales) {
      if (!std::isfinite(s) || s <= 0.0f) {
        fail(ErrorCode::kCorrupt, "tensor " + t.name +
                                      " has a non-positive channel scale");
      }
    }
    if (!std::isfinite(t.activation_scale) || t.activation_scale < 0.0f) {
      fail(ErrorCode::kCorrupt,
           "tensor " + t.name + " has an invalid activation scale");
    }
    if (t.smoothing) {
      const auto& sm = *t.smoothing;
      if (sm.s_in.size() != t.packed.rows || sm.s_out.size() != t.packed.cols) {
        fail(ErrorCode::kDimensionMismatch,
             "tensor " + t.name + " smoothing vectors do not match D x C");
      }
      for (float v : sm.s_in) {
        if (!(v > 0.0f)) fail(ErrorCode::kCorrupt, "non-positive s_in entry");
      }
      for (float v : sm.s_out) {
        if (!(v > 0.0f)) fail(ErrorCode::kCorrupt, "non-positive s_out entry");
      }
    }
  }
}

}  // namespace coldpack
