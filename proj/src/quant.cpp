// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/quant.hpp"

#include <limits>
#include <queue>
#include <tuple>

#include "coldpack/tensorstore.hpp"

namespace coldpack::quant {

double relative_error(const ChannelStats& stats, int bits) {
  if (bits < 1 || bits > 8) {
    fail(ErrorCode::kInvalidArgument, "bit-width out of range [1, 8]");
  }
  if (stats.mean_sq <= 0.0) return 0.0;
  // 4^bits is a power of two, so the division is exact.
  return stats.max_abs * stats.max_abs / stats.mean_sq / std::ldexp(1.0, 2 * bits);
}

double total_relative_error(std::span<const ChannelStats> stats,
                            std::span<const int> bits) {
  if (stats.size() != bits.size()) {
    fail(ErrorCode::kDimensionMismatch, "stats and bit-widths differ in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    total += relative_error(stats[i], bits[i]);
  }
  return total;
}

std::size_t bit_budget(std::size_t channels, double avg_bits) {
  if (!(avg_bits >= 1.0 && avg_bits <= 8.0)) {
    fail(ErrorCode::kInvalidArgument, "average bit-width must lie in [1, 8]");
  }
  // The epsilon absorbs representation error in decimal inputs like 4.3.
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(channels) * avg_bits + 1e-9));
}

namespace {

void check_budget(std::size_t channels, std::size_t budget) {
  if (channels == 0) fail(ErrorCode::kEmptyInput, "no channels to allocate");
  if (budget < channels) {
    fail(ErrorCode::kInfeasible, "bit budget " + std::to_string(budget) +
                                     " is below one bit per channel (" +
                                     std::to_string(channels) + ")");
  }
}

}  // namespace

BitAllocation allocate_bits(std::span<const ChannelStats> stats,
                            std::size_t budget) {
  const std::size_t c = stats.size();
  check_budget(c, budget);
  BitAllocation out;
  out.budget_total = budget;
  out.bits.assign(c, 1);
  std::size_t remaining = std::min(budget, 8 * c) - c;

  // (gain, channel); the comparator makes top() the largest gain and, among
  // equal gains, the smallest channel index.
  using Entry = std::pair<double, std::size_t>;
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  auto gain = [&](std::size_t i, int b) {
    return relative_error(stats[i], b) - relative_error(stats[i], b + 1);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (std::size_t i = 0; i < c; ++i) heap.emplace(gain(i, 1), i);

  while (remaining > 0 && !heap.empty()) {
    const auto [g, i] = heap.top();
    heap.pop();
    ++out.bits[i];
    --remaining;
    if (out.bits[i] < 8) heap.emplace(gain(i, out.bits[i]), i);
  }
  for (int b : out.bits) out.bits_used += static_cast<std::size_t>(b);
  return out;
}

BitAllocation allocate_bits_exhaustive(std::span<const ChannelStats> stats,
                                       std::size_t budget) {
  const std::size_t c = stats.size();
  check_budget(c, budget);
  if (c > 64) {
    fail(ErrorCode::kTooLarge, "exhaustive allocation is limited to 64 channels");
  }
  const std::size_t cap = std::min(budget, 8 * c);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[i][b]: minimum RE of the first i channels using exactly b bits.
  std::vector<std::vector<double>> best(c + 1, std::vector<double>(cap + 1, kInf));
  std::vector<std::vector<int>> choice(c + 1, std::vector<int>(cap + 1, 0));
  best[0][0] = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t b = 0; b <= cap; ++b) {
      if (best[i][b] == kInf) continue;
      for (int k = 1; k <= 8 && b + static_cast<std::size_t>(k) <= cap; ++k) {
        const double v = best[i][b] + relative_error(stats[i], k);
        auto& slot = best[i + 1][b + static_cast<std::size_t>(k)];
        if (v < slot) {
          slot = v;
          choice[i + 1][b + static_cast<std::size_t>(k)] = k;
        }
      }
    }
  }
  // Ties prefer more bits; only all-zero channels can produce them.
  std::size_t used = cap;
  for (std::size_t b = cap; b-- > c;) {
    if (best[c][b] < best[c][used]) used = b;
  }
  BitAllocation out;
  out.budget_total = budget;
  out.bits.assign(c, 0);
  std::size_t b = used;
  for (std::size_t i = c; i > 0; --i) {
    const int k = choice[i][b];
    out.bits[i - 1] = k;
    b -= static_cast<std::size_t>(k);
  }
  out.bits_used = used;
  return out;
}

Eigen::VectorXd dequantize_channel(const QuantizedChannel& qc) {
  const int limit = max_code(qc.bits);
  Eigen::VectorXd out(static_cast<Eigen::Index>(qc.codes.size()));
  for (std::size_t i = 0; i < qc.codes.size(); ++i) {
    const int q = qc.codes[i];
    const bool ok = qc.bits == 1 ? (q == -1 || q == 1) : (q >= -limit && q <= limit);
    if (!ok) {
      fail(ErrorCode::kCodeOutOfRange, "code " + std::to_string(q) +
                                           " invalid for " +
                                           std::to_string(qc.bits) + " bits");
    }
    out[static_cast<Eigen::Index>(i)] = q * qc.scale;
  }
  return out;
}

ActivationProfile profile_activation_stats(const Eigen::MatrixXd& calib) {
  if (calib.rows() == 0 || calib.cols() == 0) {
    fail(ErrorCode::kEmptyInput, "calibration set is empty");
  }
  ActivationProfile p;
  p.s_in = calib.cwiseAbs().colwise().maxCoeff().transpose().cwiseMax(kActivationEpsilon);
  p.per_tensor_scale = p.s_in.maxCoeff() / 127.0;
  return p;
}

Eigen::VectorXd profile_output_stats(const Eigen::MatrixXd& calib,
                                     const Eigen::MatrixXd& w) {
  if (calib.cols() != w.rows()) {
    fail(ErrorCode::kDimensionMismatch, "calibration width differs from D");
  }
  Eigen::VectorXd s = (calib * w).cwiseAbs().colwise().maxCoeff().transpose();
  return (s.array() > 0.0).select(s, 1.0);
}

Eigen::MatrixXd fake_quantize_per_tensor(const Eigen::MatrixXd& x, double scale) {
  return x.unaryExpr([scale](double v) {
    return std::clamp(std::nearbyint(v / scale), -127.0, 127.0) * scale;
  });
}

void QuantConfig::validate() const {
  if (!(avg_bits >= 1.0 && avg_bits <= 8.0)) {
    fail(ErrorCode::kInvalidArgument, "avg_bits must lie in [1, 8]");
  }
  if (alpha && !(*alpha >= 0.0 && *alpha <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  }
  if (!std::isfinite(beta)) fail(ErrorCode::kInvalidArgument, "beta must be finite");
  pack::check_register_width(register_width);
  (void)alpha_grid(alpha_grid_step);
}

QuantConfig quant_config_from_json(const nlohmann::json& doc) {
  QuantConfig c;
  try {
    c.avg_bits = doc.value("avg_bits", c.avg_bits);
    if (doc.contains("alpha") && !doc.at("alpha").is_null()) {
      c.alpha = doc.at("alpha").get<double>();
    }
    c.beta = doc.value("beta", c.beta);
    c.alpha_grid_step = doc.value("alpha_grid_step", c.alpha_grid_step);
    c.register_width = doc.value("register_width", c.register_width);
    c.smoothing = doc.value("smoothing", c.smoothing);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("bad quantization config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const QuantConfig& c) {
  return {{"avg_bits", c.avg_bits},
          {"alpha", c.alpha ? nlohmann::json(*c.alpha) : nlohmann::json(nullptr)},
          {"beta", c.beta},
          {"alpha_grid_step", c.alpha_grid_step},
          {"register_width", c.register_width},
          {"smoothing", c.smoothing}};
}

std::vector<double> alpha_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "alpha grid step must lie in (0, 1]");
  }
  const double n = std::round(1.0 / step);
  if (std::abs(n * step - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "alpha grid step must divide [0, 1] evenly");
  }
  std::vector<double> grid;
  for (int k = 0; k <= static_cast<int>(n); ++k) grid.push_back(k / n);
  return grid;
}

namespace {

struct SmoothedQuantization {
  SmoothingVectors<double> sv;
  CodeMatrix codes;
  std::vector<double> scales;
  BitAllocation allocation;
};

void check_calibration_inputs(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib) {
  if (w.size() == 0 || w.isZero(0.0)) {
    fail(ErrorCode::kInvalidArgument, "degenerate weight tensor (empty or all zero)");
  }
  if (calib.cols() != w.rows()) {
    fail(ErrorCode::kDimensionMismatch, "calibration width differs from D");
  }
}

// Allocates bits over the columns of `w` and quantizes each column.
void quantize_columns(const Eigen::MatrixXd& w, double avg_bits, CodeMatrix& codes,
                      std::vector<double>& scales, BitAllocation& allocation) {
  const auto c = static_cast<std::size_t>(w.cols());
  std::vector<ChannelStats> stats;
  stats.reserve(c);
  for (Eigen::Index j = 0; j < w.cols(); ++j) stats.push_back(channel_stats(w.col(j)));
  allocation = allocate_bits(stats, bit_budget(c, avg_bits));
  codes.resize(w.rows(), w.cols());
  scales.resize(c);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const auto q = quantize_channel(w.col(j), allocation.bits[static_cast<std::size_t>(j)]);
    scales[static_cast<std::size_t>(j)] = q.scale;
    codes.col(j) = Eigen::Map<const Eigen::Matrix<std::int8_t, Eigen::Dynamic, 1>>(
        q.codes.data(), w.rows());
  }
}

SmoothedQuantization smooth_and_quantize(const Eigen::MatrixXd& w,
                                         const Eigen::MatrixXd& calib,
                                         const QuantConfig& config, double alpha) {
  SmoothedQuantization out;
  out.sv.s_in = profile_activation_stats(calib).s_in;
  out.sv.s_out = profile_output_stats(calib, w);
  out.sv.alpha = alpha;
  out.sv.beta = config.beta;
  const Eigen::MatrixXd smoothed = smooth_tensor(w, out.sv);
  quantize_columns(smoothed, config.avg_bits, out.codes, out.scales, out.allocation);
  return out;
}

Eigen::MatrixXd smoothed_inputs(const Eigen::MatrixXd& calib,
                                const SmoothingVectors<double>& sv) {
  const Eigen::VectorXd inv = sv.s_in.array().pow(-sv.alpha);
  return calib * inv.asDiagonal();
}

double per_tensor_scale(const Eigen::MatrixXd& x) {
  return std::max(x.cwiseAbs().maxCoeff(), kActivationEpsilon) / 127.0;
}

}  // namespace

double smoothing_error(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                       const QuantConfig& config, double alpha) {
  check_calibration_inputs(w, calib);
  const auto sq = smooth_and_quantize(w, calib, config, alpha);
  const Eigen::Map<const Eigen::VectorXd> scales(sq.scales.data(), w.cols());
  const Eigen::MatrixXd wq = sq.codes.cast<double>() * scales.asDiagonal();
  const Eigen::MatrixXd x = smoothed_inputs(calib, sq.sv);
  const Eigen::MatrixXd xq = fake_quantize_per_tensor(x, per_tensor_scale(x));
  const Eigen::VectorXd out_scale = sq.sv.s_out.array().pow(sq.sv.beta);
  const Eigen::MatrixXd approx = xq * wq * out_scale.asDiagonal();
  return (calib * w - approx).squaredNorm() / static_cast<double>(approx.size());
}

AlphaSearch search_alpha(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                         const QuantConfig& config) {
  check_calibration_inputs(w, calib);
  AlphaSearch s;
  s.grid = alpha_grid(config.alpha_grid_step);
  double best = std::numeric_limits<double>::infinity();
  for (double a : s.grid) {
    const double e = smoothing_error(w, calib, config, a);
    s.errors.push_back(e);
    if (e < best) {
      best = e;
      s.alpha = a;
    }
  }
  return s;
}

double calibrate_alpha(const Eigen::MatrixXd& w, const Eigen::MatrixXd& calib,
                       const QuantConfig& config) {
  return search_alpha(w, calib, config).alpha;
}

QuantizedTensor quantize_tensor(const Eigen::MatrixXd& w, const QuantConfig& config,
                                const Eigen::MatrixXd* calib) {
  config.validate();
  if (w.size() == 0) fail(ErrorCode::kEmptyInput, "empty weight tensor");
  QuantizedTensor out;
  std::vector<double> scales;
  if (config.smoothing) {
    if (calib == nullptr) {
      fail(ErrorCode::kInvalidArgument, "smoothing requires calibration inputs");
    }
    const double alpha = config.alpha ? *config.alpha : calibrate_alpha(w, *calib, config);
    auto sq = smooth_and_quantize(w, *calib, config, alpha);
    out.codes = std::move(sq.codes);
    out.allocation = std::move(sq.allocation);
    scales = std::move(sq.scales);
    StoredSmoothing s;
    s.alpha = alpha;
    s.beta = config.beta;
    s.s_in.assign(sq.sv.s_in.data(), sq.sv.s_in.data() + sq.sv.s_in.size());
    s.s_out.assign(sq.sv.s_out.data(), sq.sv.s_out.data() + sq.sv.s_out.size());
    out.smoothing = std::move(s);
    out.activation_scale =
        static_cast<float>(per_tensor_scale(smoothed_inputs(*calib, sq.sv)));
  } else {
    quantize_columns(w, config.avg_bits, out.codes, scales, out.allocation);
    if (calib != nullptr) {
      if (calib->cols() != w.rows()) {
        fail(ErrorCode::kDimensionMismatch, "calibration width differs from D");
      }
      out.activation_scale = static_cast<float>(profile_activation_stats(*calib).per_tensor_scale);
    }
  }
  out.scales.assign(scales.begin(), scales.end());
  return out;
}

QuantizedPackedModel quantize_model(const TensorArchive& archive,
                                    const QuantConfig& config,
                                    const CalibrationSet* calib) {
  archive.validate();
  config.validate();
  // Stable order by layer id, unindexed tensors first as layer 0.
  std::vector<std::tuple<std::uint32_t, std::size_t>> order;
  for (std::size_t i = 0; i < archive.tensors.size(); ++i) {
    order.emplace_back(archive.layer_of(archive.tensors[i].name).value_or(0), i);
  }
  std::stable_sort(order.begin(), order.end());

  QuantizedPackedModel model;
  model.register_width = static_cast<std::uint32_t>(config.register_width);
  for (const auto& [layer, index] : order) {
    const ArchiveTensor& t = archive.tensors[index];
    const Eigen::MatrixXd w = t.values().cast<double>();
    const Eigen::MatrixXd* samples = nullptr;
    if (calib != nullptr) {
      if (auto it = calib->find(t.name); it != calib->end()) samples = &it->second;
    }
    if (config.smoothing && samples == nullptr) {
      fail(ErrorCode::kInvalidArgument, "smoothing enabled but no calibration for " + t.name);
    }
    QuantizedTensor q = quantize_tensor(w, config, samples);
    PackedTensorRecord rec;
    rec.name = t.name;
    rec.layer = layer;
    rec.packed = pack::pack_tensor(q.codes, q.allocation.bits, q.scales, config.register_width);
    rec.smoothing = std::move(q.smoothing);
    rec.activation_scale = q.activation_scale;
    model.tensors.push_back(std::move(rec));
  }
  model.validate();
  return model;
}

nlohmann::json allocation_report(const QuantizedPackedModel& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::uint64_t> total_hist(8, 0);
  std::vector<std::uint64_t> weight_hist(8, 0);
  std::uint64_t bits_sum = 0, channels = 0;
  for (const auto& t : model.tensors) {
    std::vector<std::uint64_t> hist(8, 0);
    std::uint64_t used = 0;
    for (int b : t.packed.channel_bits) {
      ++hist[static_cast<std::size_t>(b - 1)];
      weight_hist[static_cast<std::size_t>(b - 1)] += t.packed.rows;
      used += static_cast<std::uint64_t>(b);
    }
    for (std::size_t b = 0; b < 8; ++b) total_hist[b] += hist[b];
    bits_sum += used;
    channels += t.packed.cols;
    tensors.push_back({{"name", t.name},
                       {"layer", t.layer},
                       {"rows", t.packed.rows},
                       {"cols", t.packed.cols},
                       {"padded_rows", t.packed.padded_rows},
                       {"bits_used", used},
                       {"mean_bits", static_cast<double>(used) / t.packed.cols},
                       {"histogram", hist},
                       {"block_bytes", t.packed.blocks.size()},
                       {"smoothing", t.smoothing ? nlohmann::json{{"alpha", t.smoothing->alpha},
                                                                  {"beta", t.smoothing->beta}}
                                                 : nlohmann::json(nullptr)},
                       {"activation_scale", t.activation_scale}});
  }
  return {{"register_width", model.register_width},
          {"tensors", tensors},
          {"histogram", total_hist},
          {"mean_bits", channels ? static_cast<double>(bits_sum) / channels : 0.0},
          {"block_bytes", model.block_bytes()},
          {"instructions_per_weight",
           pack::mixed_instruction_estimate(weight_hist)}};
}

}  // namespace coldpack::quant
