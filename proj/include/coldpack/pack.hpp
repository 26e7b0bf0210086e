// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Weightlet packing format.
//
// A W-bit code (1 <= W <= 8) is split into primitive 4-, 2- and 1-bit
// weightlets. 4-bit fields occupy the low bits of the value, then 2-bit,
// with a 1-bit field (if any) at the top. A channel is cut into groups of R
// consecutive weights (R = SIMD register width in bits); a group holds 8
// stripes of R/8 weights. For every weightlet field of width B the group
// stores B blocks of R/8 bytes; block m carries stripes [m*8/B, (m+1)*8/B)
// and byte k of the block holds weight k of each covered stripe, the t-th
// covered stripe sitting at bits [8-(t+1)*B, 8-t*B). Unpacking a stripe is
// then one AND, one shift and one OR per field over a whole register.

#ifndef COLDPACK_PACK_HPP
#define COLDPACK_PACK_HPP

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace coldpack {

using CodeMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

namespace pack {

inline constexpr int kMinBits = 1;
inline constexpr int kMaxBits = 8;
inline constexpr int kDefaultRegisterWidth = 128;

struct WeightletField {
  int width = 0;   // 4, 2 or 1
  int offset = 0;  // lsb position inside the W-bit value

  friend bool operator==(const WeightletField&, const WeightletField&) = default;
};

struct WeightletPlan {
  int bits = 0;
  std::vector<WeightletField> fields;  // descending width, ascending offset

  // Number of R-bit blocks this plan occupies per group (== bits).
  int blocks_per_group() const;
  // Index of the first block of `field` inside a group.
  int first_block(std::size_t field) const;
};

WeightletPlan decompose(int bits);

// Offset-binary sign handling: u = q + 2^(W-1) for W >= 2, u = (q + 1) / 2
// for W = 1.
std::uint8_t encode_offset(int q, int bits);
int decode_offset(std::uint8_t u, int bits);

// Throws unless R is a power of two and a multiple of 8.
void check_register_width(int register_width);

// D rounded up to a multiple of R.
std::size_t padded_rows(std::size_t rows, int register_width);

// Bytes occupied by one channel of `padded` weights at `bits`.
constexpr std::size_t channel_block_bytes(std::size_t padded, int bits) {
  return padded * static_cast<std::size_t>(bits) / 8;
}

std::vector<std::uint8_t> pack_channel(std::span<const std::uint8_t> u_codes,
                                       int bits, int register_width);
void pack_channel(std::span<const std::uint8_t> u_codes, int bits,
                  int register_width, std::span<std::uint8_t> out);

// Scalar bit-by-bit inverse of pack_channel followed by decode_offset.
std::vector<std::int8_t> unpack_channel_reference(
    std::span<const std::uint8_t> blocks, int bits, int register_width);

// Wide-lane unpacker (mask, align, merge, then one bias subtract).
std::vector<std::int8_t> unpack_channel_simd(
    std::span<const std::uint8_t> blocks, int bits, int register_width);
void unpack_channel_simd(std::span<const std::uint8_t> blocks, int bits,
                         int register_width, std::span<std::int8_t> out);

// One AND/shift step of the per-stripe unpack program. `shift` > 0 is a
// logical right shift, < 0 a left shift.
struct UnpackStep {
  int block = 0;  // block index within the group
  std::uint8_t mask = 0;
  int shift = 0;
  int field = 0;
};

struct StripeProgram {
  std::vector<UnpackStep> steps;
  std::uint8_t bias = 0;  // subtracted once after merging

  // F masks + F shifts + (F - 1) ORs + one subtract
  int op_count() const { return 3 * static_cast<int>(steps.size()); }
};

// The 8 stripe programs of a group, independent of R.
std::array<StripeProgram, 8> build_unpack_program(int bits);

// Wide ops per weight for one register of `register_width` bits.
double unpack_instruction_estimate(int bits,
                                   int register_width = kDefaultRegisterWidth);

// Weight-count-weighted average of the estimate; histogram[b-1] holds the
// number of weights stored at b bits.
double mixed_instruction_estimate(std::span<const std::uint64_t> histogram,
                                  int register_width = kDefaultRegisterWidth);

// INT3 array of (bits - 1), 3 bits per channel, LSB-first.
std::vector<std::uint8_t> encode_bitwidth_metadata(std::span<const int> bits);
std::vector<int> decode_bitwidth_metadata(std::span<const std::uint8_t> bytes,
                                          std::size_t channels);
constexpr std::size_t metadata_bytes(std::size_t channels) {
  return (3 * channels + 7) / 8;
}

// One D x C weight tensor in packed form. Block bytes are channel-major.
struct PackedTensor {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t padded_rows = 0;
  std::uint32_t register_width = kDefaultRegisterWidth;
  std::vector<int> channel_bits;
  std::vector<std::uint8_t> metadata;
  std::vector<float> scales;
  std::vector<std::uint8_t> blocks;

  // Byte offset of every channel's blocks plus a trailing end offset.
  std::vector<std::size_t> channel_offsets() const;
  std::span<const std::uint8_t> channel_blocks(std::size_t channel) const;

  // Sum over channels of D' * W_i / 8.
  std::size_t expected_block_bytes() const;

  // Structural checks; throws coldpack::Error on violation.
  void validate() const;

  bool operator==(const PackedTensor&) const = default;
};

// codes is D x C (one column per output channel).
PackedTensor pack_tensor(const CodeMatrix& codes, std::span<const int> bits,
                         std::span<const float> scales, int register_width);

enum class UnpackKernel { kReference, kSimd };

// Returns the D x C code matrix (padding rows dropped).
CodeMatrix unpack_tensor(const PackedTensor& tensor,
                         UnpackKernel kernel = UnpackKernel::kSimd);

// codes(d, c) * scales[c] in float, the exact dequantized weight.
Eigen::MatrixXf dequantize_codes(const CodeMatrix& codes,
                                 std::span<const float> scales);

}  // namespace pack
}  // namespace coldpack

#endif  // COLDPACK_PACK_HPP
