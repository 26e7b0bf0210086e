// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/pack.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>

#include "coldpack/error.hpp"

#if defined(__SSE2__)
#include <emmintrin.h>
#define COLDPACK_HAVE_SSE2 1
#elif defined(__ARM_NEON)
#include <arm_neon.h>
#define COLDPACK_HAVE_NEON 1
#endif

namespace coldpack::pack {
namespace {

void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    fail(ErrorCode::kInvalidArgument,
         "bit-width out of range [1, 8]: " + std::to_string(bits));
  }
}

// Bit position (lsb) of stripe slot t inside a byte for a B-bit field.
constexpr int slot_lsb(int t, int width) { return 8 - (t + 1) * width; }

struct GroupGeometry {
  std::size_t lanes;        // R / 8: weights per stripe, bytes per block
  std::size_t group_bytes;  // R * W / 8
};

GroupGeometry geometry(int bits, int register_width) {
  const auto lanes = static_cast<std::size_t>(register_width) / 8;
  return {lanes, lanes * static_cast<std::size_t>(bits)};
}

}  // namespace

int WeightletPlan::blocks_per_group() const {
  int n = 0;
  for (const auto& f : fields) n += f.width;
  return n;
}

int WeightletPlan::first_block(std::size_t field) const {
  int n = 0;
  for (std::size_t i = 0; i < field; ++i) n += fields[i].width;
  return n;
}

WeightletPlan decompose(int bits) {
  check_bits(bits);
  WeightletPlan plan;
  plan.bits = bits;
  int remaining = bits;
  int offset = 0;
  for (int width : {4, 2, 1}) {
    while (remaining >= width) {
      plan.fields.push_back({width, offset});
      offset += width;
      remaining -= width;
    }
  }
  return plan;
}

std::uint8_t encode_offset(int q, int bits) {
  check_bits(bits);
  if (bits == 1) {
    if (q != -1 && q != 1) {
      fail(ErrorCode::kCodeOutOfRange,
           "1-bit code must be -1 or +1, got " + std::to_string(q));
    }
    return static_cast<std::uint8_t>((q + 1) / 2);
  }
  const int half = 1 << (bits - 1);
  if (q < -(half - 1) || q > half - 1) {
    fail(ErrorCode::kCodeOutOfRange, "code " + std::to_string(q) +
                                         " out of range for " +
                                         std::to_string(bits) + " bits");
  }
  return static_cast<std::uint8_t>(q + half);
}

int decode_offset(std::uint8_t u, int bits) {
  check_bits(bits);
  if (u >= (1u << bits)) {
    fail(ErrorCode::kCodeOutOfRange, "unsigned code " + std::to_string(u) +
                                         " wider than " +
                                         std::to_string(bits) + " bits");
  }
  if (bits == 1) return 2 * static_cast<int>(u) - 1;
  return static_cast<int>(u) - (1 << (bits - 1));
}

void check_register_width(int register_width) {
  if (register_width < 8 || register_width % 8 != 0 ||
      !std::has_single_bit(static_cast<unsigned>(register_width))) {
    fail(ErrorCode::kInvalidArgument,
         "register width must be a power of two >= 8, got " +
             std::to_string(register_width));
  }
}

std::size_t padded_rows(std::size_t rows, int register_width) {
  check_register_width(register_width);
  const auto r = static_cast<std::size_t>(register_width);
  return (rows + r - 1) / r * r;
}

void pack_channel(std::span<const std::uint8_t> u_codes, int bits,
                  int register_width, std::span<std::uint8_t> out) {
  check_bits(bits);
  check_register_width(register_width);
  const auto r = static_cast<std::size_t>(register_width);
  if (u_codes.size() % r != 0) {
    fail(ErrorCode::kInvalidArgument,
         "channel length " + std::to_string(u_codes.size()) +
             " is not a multiple of R=" + std::to_string(register_width));
  }
  if (out.size() != channel_block_bytes(u_codes.size(), bits)) {
    fail(ErrorCode::kDimensionMismatch, "pack output buffer has wrong size");
  }
  const std::uint8_t limit = static_cast<std::uint8_t>((1u << bits) - 1);
  for (std::uint8_t u : u_codes) {
    if (u > limit) {
      fail(ErrorCode::kCodeOutOfRange,
           "unsigned code " + std::to_string(u) + " overflows " +
               std::to_string(bits) + " bits");
    }
  }

  const WeightletPlan plan = decompose(bits);
  const auto [lanes, group_bytes] = geometry(bits, register_width);
  std::fill(out.begin(), out.end(), std::uint8_t{0});

  const std::size_t groups = u_codes.size() / r;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* in = u_codes.data() + g * r;
    std::uint8_t* dst = out.data() + g * group_bytes;
    for (std::size_t f = 0; f < plan.fields.size(); ++f) {
      const auto [width, offset] = plan.fields[f];
      const int per_byte = 8 / width;
      const unsigned field_mask = (1u << width) - 1;
      const int base = plan.first_block(f);
      for (int m = 0; m < width; ++m) {
        std::uint8_t* block = dst + static_cast<std::size_t>(base + m) * lanes;
        for (int t = 0; t < per_byte; ++t) {
          const std::size_t stripe = static_cast<std::size_t>(m * per_byte + t);
          const std::uint8_t* src = in + stripe * lanes;
          for (std::size_t k = 0; k < lanes; ++k) {
            const unsigned v = (src[k] >> offset) & field_mask;
            block[k] |= static_cast<std::uint8_t>(v << slot_lsb(t, width));
          }
        }
      }
    }
  }
}

std::vector<std::uint8_t> pack_channel(std::span<const std::uint8_t> u_codes,
                                       int bits, int register_width) {
  check_bits(bits);
  std::vector<std::uint8_t> out(channel_block_bytes(u_codes.size(), bits));
  pack_channel(u_codes, bits, register_width, out);
  return out;
}

namespace {

std::size_t checked_weight_count(std::span<const std::uint8_t> blocks,
                                 int bits, int register_width) {
  check_bits(bits);
  check_register_width(register_width);
  const auto [lanes, group_bytes] = geometry(bits, register_width);
  (void)lanes;
  if (blocks.size() % group_bytes != 0) {
    fail(ErrorCode::kDimensionMismatch,
         "block length " + std::to_string(blocks.size()) +
             " is not a multiple of the group size " +
             std::to_string(group_bytes));
  }
  return blocks.size() / group_bytes * static_cast<std::size_t>(register_width);
}

}  // namespace

std::vector<std::int8_t> unpack_channel_reference(
    std::span<const std::uint8_t> blocks, int bits, int register_width) {
  const std::size_t n = checked_weight_count(blocks, bits, register_width);
  const WeightletPlan plan = decompose(bits);
  const auto [lanes, group_bytes] = geometry(bits, register_width);
  const auto r = static_cast<std::size_t>(register_width);

  std::vector<std::int8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = i / r;
    const std::size_t local = i % r;
    const std::size_t stripe = local / lanes;
    const std::size_t k = local % lanes;
    unsigned u = 0;
    for (std::size_t f = 0; f < plan.fields.size(); ++f) {
      const auto [width, offset] = plan.fields[f];
      const std::size_t per_byte = static_cast<std::size_t>(8 / width);
      const std::size_t m = stripe / per_byte;
      const int t = static_cast<int>(stripe % per_byte);
      const std::size_t block = static_cast<std::size_t>(plan.first_block(f)) + m;
      const std::uint8_t byte = blocks[g * group_bytes + block * lanes + k];
      for (int b = 0; b < width; ++b) {
        const unsigned bit = (byte >> (slot_lsb(t, width) + b)) & 1u;
        u |= bit << (offset + b);
      }
    }
    out[i] = static_cast<std::int8_t>(
        decode_offset(static_cast<std::uint8_t>(u), bits));
  }
  return out;
}

std::array<StripeProgram, 8> build_unpack_program(int bits) {
  const WeightletPlan plan = decompose(bits);
  std::array<StripeProgram, 8> program;
  for (int s = 0; s < 8; ++s) {
    StripeProgram& p = program[static_cast<std::size_t>(s)];
    for (std::size_t f = 0; f < plan.fields.size(); ++f) {
      const auto [width, offset] = plan.fields[f];
      const int per_byte = 8 / width;
      const int t = s % per_byte;
      const int lsb = slot_lsb(t, width);
      // 1-bit codes are aligned one position higher so that u -> 2u - 1
      // needs only the shared bias subtract.
      const int target = bits == 1 ? 1 : offset;
      UnpackStep step;
      step.block = plan.first_block(f) + s / per_byte;
      step.mask = static_cast<std::uint8_t>(((1u << width) - 1) << lsb);
      step.shift = lsb - target;
      step.field = static_cast<int>(f);
      p.steps.push_back(step);
    }
    p.bias = static_cast<std::uint8_t>(1u << (bits - 1));
  }
  return program;
}

namespace {

// Generic wide lanes: every op runs over the whole register, R/8 bytes.
void unpack_groups_generic(const std::uint8_t* src, std::size_t groups,
                           std::size_t lanes, std::size_t group_bytes,
                           const std::array<StripeProgram, 8>& program,
                           std::int8_t* dst) {
  std::vector<std::uint8_t> acc(lanes);
  std::vector<std::uint8_t> reg(lanes);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* group = src + g * group_bytes;
    for (std::size_t s = 0; s < 8; ++s) {
      const StripeProgram& p = program[s];
      std::fill(acc.begin(), acc.end(), std::uint8_t{0});
      for (const UnpackStep& step : p.steps) {
        const std::uint8_t* block =
            group + static_cast<std::size_t>(step.block) * lanes;
        for (std::size_t k = 0; k < lanes; ++k) reg[k] = block[k] & step.mask;
        if (step.shift > 0) {
          for (std::size_t k = 0; k < lanes; ++k) reg[k] >>= step.shift;
        } else if (step.shift < 0) {
          for (std::size_t k = 0; k < lanes; ++k)
            reg[k] = static_cast<std::uint8_t>(reg[k] << -step.shift);
        }
        for (std::size_t k = 0; k < lanes; ++k) acc[k] |= reg[k];
      }
      std::int8_t* out = dst + g * 8 * lanes + s * lanes;
      for (std::size_t k = 0; k < lanes; ++k) {
        out[k] = static_cast<std::int8_t>(
            static_cast<std::uint8_t>(acc[k] - p.bias));
      }
    }
  }
}

#if defined(COLDPACK_HAVE_SSE2)
// SSE2 has no 8-bit shifts; shift 16-bit lanes and clear the bits that
// crossed a byte boundary.
inline __m128i srl_epi8(__m128i v, int n) {
  const __m128i keep = _mm_set1_epi8(static_cast<char>(0xFFu >> n));
  return _mm_and_si128(_mm_srl_epi16(v, _mm_cvtsi32_si128(n)), keep);
}

inline __m128i sll_epi8(__m128i v, int n) {
  const __m128i keep = _mm_set1_epi8(static_cast<char>((0xFFu << n) & 0xFFu));
  return _mm_and_si128(_mm_sll_epi16(v, _mm_cvtsi32_si128(n)), keep);
}

void unpack_groups_128(const std::uint8_t* src, std::size_t groups,
                       std::size_t group_bytes,
                       const std::array<StripeProgram, 8>& program,
                       std::int8_t* dst) {
  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* group = src + g * group_bytes;
    for (std::size_t s = 0; s < 8; ++s) {
      const StripeProgram& p = program[s];
      __m128i acc = _mm_setzero_si128();
      for (const UnpackStep& step : p.steps) {
        __m128i v = _mm_loadu_si128(reinterpret_cast<const __m128i*>(
            group + static_cast<std::size_t>(step.block) * 16));
        v = _mm_and_si128(v, _mm_set1_epi8(static_cast<char>(step.mask)));
        if (step.shift > 0) {
          v = srl_epi8(v, step.shift);
        } else if (step.shift < 0) {
          v = sll_epi8(v, -step.shift);
        }
        acc = _mm_or_si128(acc, v);
      }
      acc = _mm_sub_epi8(acc, _mm_set1_epi8(static_cast<char>(p.bias)));
      _mm_storeu_si128(reinterpret_cast<__m128i*>(dst + g * 128 + s * 16), acc);
    }
  }
}
#elif defined(COLDPACK_HAVE_NEON)
void unpack_groups_128(const std::uint8_t* src, std::size_t groups,
                       std::size_t group_bytes,
                       const std::array<StripeProgram, 8>& program,
                       std::int8_t* dst) {
  for (std::size_t g = 0; g < groups; ++g) {
    const std::uint8_t* group = src + g * group_bytes;
    for (std::size_t s = 0; s < 8; ++s) {
      const StripeProgram& p = program[s];
      uint8x16_t acc = vdupq_n_u8(0);
      for (const UnpackStep& step : p.steps) {
        uint8x16_t v = vld1q_u8(group + static_cast<std::size_t>(step.block) * 16);
        v = vandq_u8(v, vdupq_n_u8(step.mask));
        // vshlq with a negative count shifts right.
        v = vshlq_u8(v, vdupq_n_s8(static_cast<std::int8_t>(-step.shift)));
        acc = vorrq_u8(acc, v);
      }
      acc = vsubq_u8(acc, vdupq_n_u8(p.bias));
      vst1q_s8(dst + g * 128 + s * 16, vreinterpretq_s8_u8(acc));
    }
  }
}
#endif

}  // namespace

void unpack_channel_simd(std::span<const std::uint8_t> blocks, int bits,
                         int register_width, std::span<std::int8_t> out) {
  const std::size_t n = checked_weight_count(blocks, bits, register_width);
  if (out.size() != n) {
    fail(ErrorCode::kDimensionMismatch, "unpack output buffer has wrong size");
  }
  const auto program = build_unpack_program(bits);
  const auto [lanes, group_bytes] = geometry(bits, register_width);
  const std::size_t groups = n / static_cast<std::size_t>(register_width);
#if defined(COLDPACK_HAVE_SSE2) || defined(COLDPACK_HAVE_NEON)
  if (register_width == 128) {
    unpack_groups_128(blocks.data(), groups, group_bytes, program, out.data());
    return;
  }
#endif
  unpack_groups_generic(blocks.data(), groups, lanes, group_bytes, program,
                        out.data());
}

std::vector<std::int8_t> unpack_channel_simd(
    std::span<const std::uint8_t> blocks, int bits, int register_width) {
  std::vector<std::int8_t> out(checked_weight_count(blocks, bits, register_width));
  unpack_channel_simd(blocks, bits, register_width, out);
  return out;
}

double unpack_instruction_estimate(int bits, int register_width) {
  check_register_width(register_width);
  const auto program = build_unpack_program(bits);
  int ops = 0;
  for (const auto& p : program) ops += p.op_count();
  return static_cast<double>(ops) / static_cast<double>(register_width);
}

double mixed_instruction_estimate(std::span<const std::uint64_t> histogram,
                                  int register_width) {
  if (histogram.size() != static_cast<std::size_t>(kMaxBits)) {
    fail(ErrorCode::kInvalidArgument, "bit histogram must have 8 entries");
  }
  double weighted = 0.0;
  double total = 0.0;
  for (int b = kMinBits; b <= kMaxBits; ++b) {
    const auto n = static_cast<double>(histogram[static_cast<std::size_t>(b - 1)]);
    weighted += n * unpack_instruction_estimate(b, register_width);
    total += n;
  }
  return total > 0.0 ? weighted / total : 0.0;
}

std::vector<std::uint8_t> encode_bitwidth_metadata(std::span<const int> bits) {
  std::vector<std::uint8_t> out(metadata_bytes(bits.size()), 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    check_bits(bits[i]);
    const unsigned code = static_cast<unsigned>(bits[i] - 1);
    for (unsigned b = 0; b < 3; ++b) {
      const std::size_t pos = 3 * i + b;
      out[pos / 8] |= static_cast<std::uint8_t>(((code >> b) & 1u) << (pos % 8));
    }
  }
  return out;
}

std::vector<int> decode_bitwidth_metadata(std::span<const std::uint8_t> bytes,
                                          std::size_t channels) {
  if (bytes.size() < metadata_bytes(channels)) {
    fail(ErrorCode::kTruncated, "bit-width metadata holds " +
                                    std::to_string(bytes.size()) +
                                    " bytes, need " +
                                    std::to_string(metadata_bytes(channels)));
  }
  std::vector<int> bits(channels);
  for (std::size_t i = 0; i < channels; ++i) {
    unsigned code = 0;
    for (unsigned b = 0; b < 3; ++b) {
      const std::size_t pos = 3 * i + b;
      code |= ((bytes[pos / 8] >> (pos % 8)) & 1u) << b;
    }
    bits[i] = static_cast<int>(code) + 1;
  }
  return bits;
}

std::vector<std::size_t> PackedTensor::channel_offsets() const {
  std::vector<std::size_t> offsets(channel_bits.size() + 1, 0);
  for (std::size_t c = 0; c < channel_bits.size(); ++c) {
    offsets[c + 1] = offsets[c] + channel_block_bytes(padded_rows, channel_bits[c]);
  }
  return offsets;
}

std::span<const std::uint8_t> PackedTensor::channel_blocks(
    std::size_t channel) const {
  if (channel >= channel_bits.size()) {
    fail(ErrorCode::kInvalidArgument, "channel index out of range");
  }
  std::size_t begin = 0;
  for (std::size_t c = 0; c < channel; ++c) {
    begin += channel_block_bytes(padded_rows, channel_bits[c]);
  }
  const std::size_t len = channel_block_bytes(padded_rows, channel_bits[channel]);
  if (begin + len > blocks.size()) {
    fail(ErrorCode::kTruncated, "channel blocks extend past the block section");
  }
  return std::span<const std::uint8_t>(blocks).subspan(begin, len);
}

std::size_t PackedTensor::expected_block_bytes() const {
  std::size_t total = 0;
  for (int b : channel_bits) total += channel_block_bytes(padded_rows, b);
  return total;
}

void PackedTensor::validate() const {
  check_register_width(static_cast<int>(register_width));
  if (rows == 0 || cols == 0) {
    fail(ErrorCode::kInvalidArgument, "packed tensor has an empty dimension");
  }
  if (padded_rows != pack::padded_rows(rows, static_cast<int>(register_width))) {
    fail(ErrorCode::kCorrupt, "padded rows " + std::to_string(padded_rows) +
                                  " do not match D=" + std::to_string(rows) +
                                  " rounded to R=" +
                                  std::to_string(register_width));
  }
  if (channel_bits.size() != cols || scales.size() != cols) {
    fail(ErrorCode::kDimensionMismatch,
         "per-channel bit-widths or scales do not match C");
  }
  for (int b : channel_bits) check_bits(b);
  if (decode_bitwidth_metadata(metadata, cols) != channel_bits ||
      metadata.size() != metadata_bytes(cols)) {
    fail(ErrorCode::kCorrupt, "bit-width metadata disagrees with channel bits");
  }
  if (blocks.size() != expected_block_bytes()) {
    fail(ErrorCode::kCorrupt, "block section holds " +
                                  std::to_string(blocks.size()) +
                                  " bytes, expected " +
                                  std::to_string(expected_block_bytes()));
  }
}

PackedTensor pack_tensor(const CodeMatrix& codes, std::span<const int> bits,
                         std::span<const float> scales, int register_width) {
  check_register_width(register_width);
  const auto rows = static_cast<std::size_t>(codes.rows());
  const auto cols = static_cast<std::size_t>(codes.cols());
  if (rows == 0 || cols == 0) {
    fail(ErrorCode::kInvalidArgument, "cannot pack an empty tensor");
  }
  if (bits.size() != cols || scales.size() != cols) {
    fail(ErrorCode::kDimensionMismatch,
         "bit-widths/scales length differs from channel count");
  }
  PackedTensor t;
  t.rows = static_cast<std::uint32_t>(rows);
  t.cols = static_cast<std::uint32_t>(cols);
  t.padded_rows = static_cast<std::uint32_t>(padded_rows(rows, register_width));
  t.register_width = static_cast<std::uint32_t>(register_width);
  t.channel_bits.assign(bits.begin(), bits.end());
  t.metadata = encode_bitwidth_metadata(bits);
  t.scales.assign(scales.begin(), scales.end());
  t.blocks.resize(t.expected_block_bytes());

  std::vector<std::uint8_t> u(t.padded_rows);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    const int b = bits[c];
    for (std::size_t d = 0; d < rows; ++d) {
      u[d] = encode_offset(codes(static_cast<Eigen::Index>(d),
                                 static_cast<Eigen::Index>(c)),
                           b);
    }
    // Padding weights are zero; at one bit zero quantizes to +1.
    const std::uint8_t pad = encode_offset(b == 1 ? 1 : 0, b);
    std::fill(u.begin() + static_cast<std::ptrdiff_t>(rows), u.end(), pad);
    const std::size_t len = channel_block_bytes(t.padded_rows, b);
    pack_channel(u, b, register_width,
                 std::span<std::uint8_t>(t.blocks).subspan(offset, len));
    offset += len;
  }
  return t;
}

CodeMatrix unpack_tensor(const PackedTensor& tensor, UnpackKernel kernel) {
  tensor.validate();
  const auto rows = static_cast<Eigen::Index>(tensor.rows);
  CodeMatrix codes(rows, static_cast<Eigen::Index>(tensor.cols));
  std::vector<std::int8_t> buf(tensor.padded_rows);
  const auto offsets = tensor.channel_offsets();
  const int r = static_cast<int>(tensor.register_width);
  for (std::size_t c = 0; c < tensor.cols; ++c) {
    const auto blocks = std::span<const std::uint8_t>(tensor.blocks)
                            .subspan(offsets[c], offsets[c + 1] - offsets[c]);
    const int b = tensor.channel_bits[c];
    if (kernel == UnpackKernel::kSimd) {
      unpack_channel_simd(blocks, b, r, buf);
    } else {
      buf = unpack_channel_reference(blocks, b, r);
    }
    std::memcpy(codes.col(static_cast<Eigen::Index>(c)).data(), buf.data(),
                static_cast<std::size_t>(rows));
  }
  return codes;
}

Eigen::MatrixXf dequantize_codes(const CodeMatrix& codes,
                                 std::span<const float> scales) {
  if (scales.size() != static_cast<std::size_t>(codes.cols())) {
    fail(ErrorCode::kDimensionMismatch, "scale count differs from channel count");
  }
  const Eigen::Map<const Eigen::RowVectorXf> s(scales.data(), codes.cols());
  return (codes.cast<float>().array().rowwise() * s.array()).matrix();
}

}  // namespace coldpack::pack
