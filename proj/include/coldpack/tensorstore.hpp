// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

// Tensor archive (neutral float input) and EFPK (packed model) containers.
// Both formats are documented byte-for-byte in docs/formats.md.

#ifndef COLDPACK_TENSORSTORE_HPP
#define COLDPACK_TENSORSTORE_HPP

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coldpack/model.hpp"

namespace coldpack {

enum class DType : std::uint8_t { kF32, kF16 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);

struct ArchiveTensor {
  std::string name;
  std::uint32_t rows = 0;  // D, weights per output channel
  std::uint32_t cols = 0;  // C, output channels
  DType dtype = DType::kF32;
  std::vector<std::uint8_t> payload;  // row-major, little-endian

  // Decoded D x C values.
  Eigen::MatrixXf values() const;

  bool operator==(const ArchiveTensor&) const = default;
};

struct TensorArchive {
  std::vector<ArchiveTensor> tensors;
  std::map<std::uint32_t, std::vector<std::string>> layer_index;

  // Encodes `values` (D x C) with the given dtype and registers it under
  // `layer`.
  void add(std::string name, std::uint32_t layer, const Eigen::MatrixXf& values,
           DType dtype = DType::kF32);

  const ArchiveTensor* find(std::string_view name) const;
  // Layer a tensor is registered under; nullopt if unindexed.
  std::optional<std::uint32_t> layer_of(std::string_view name) const;

  void validate() const;

  bool operator==(const TensorArchive&) const = default;
};

std::vector<std::uint8_t> serialize_tensor_archive(const TensorArchive& archive);
TensorArchive parse_tensor_archive(std::span<const std::uint8_t> bytes);

std::uint64_t write_tensor_archive(const TensorArchive& archive,
                                   const std::filesystem::path& path);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

inline constexpr char kEfpkMagic[4] = {'E', 'F', 'P', 'K'};
inline constexpr std::uint32_t kEfpkVersion = 1;

// On-disk descriptor of one packed tensor. Offsets are absolute.
struct EfpkDescriptor {
  std::string name;
  std::uint32_t layer = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t padded_rows = 0;
  bool has_smoothing = false;
  double alpha = 0.0;
  double beta = 0.0;
  float activation_scale = 0.0f;
  std::uint64_t metadata_offset = 0, metadata_size = 0;
  std::uint64_t scales_offset = 0, scales_size = 0;
  std::uint64_t smoothing_offset = 0, smoothing_size = 0;
  std::uint64_t blocks_offset = 0, blocks_size = 0;
  std::uint32_t blocks_crc32 = 0;

  std::uint64_t data_begin() const { return metadata_offset; }
  std::uint64_t data_end() const { return blocks_offset + blocks_size; }
};

std::vector<std::uint8_t> serialize_efpk(const QuantizedPackedModel& model);
QuantizedPackedModel parse_efpk(std::span<const std::uint8_t> bytes);

// Returns the number of bytes written (== resulting file size).
std::uint64_t write_efpk(const QuantizedPackedModel& model,
                         const std::filesystem::path& path);
QuantizedPackedModel read_efpk(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

struct EfpkLayer {
  std::uint32_t layer = 0;
  std::vector<PackedTensorRecord> tensors;
  std::uint64_t offset = 0;        // first byte of the layer's data region
  std::vector<std::uint8_t> raw;   // the layer's data region, verbatim
};

// Random-access reader. Immutable after open(); read_layer() opens its own
// stream, so concurrent calls are safe.
class EfpkReader {
 public:
  static EfpkReader open(const std::filesystem::path& path);

  std::uint32_t register_width() const { return register_width_; }
  const std::vector<EfpkDescriptor>& descriptors() const { return descriptors_; }
  // Distinct layer ids in file order (ascending).
  const std::vector<std::uint32_t>& layer_ids() const { return layer_ids_; }
  std::size_t layer_count() const { return layer_ids_.size(); }
  std::uint64_t header_bytes() const { return header_bytes_; }
  std::uint64_t file_size() const { return file_size_; }

  // Reads the position-th layer (0-based index into layer_ids()).
  EfpkLayer read_layer(std::size_t position) const;

 private:
  friend class EfpkLayerStream;
  EfpkReader() = default;

  void assign(const std::filesystem::path& path,
              std::vector<EfpkDescriptor> descriptors,
              std::uint32_t register_width, std::uint64_t header_bytes,
              std::uint64_t file_size);
  EfpkLayer decode_layer(std::size_t position,
                         std::vector<std::uint8_t> raw) const;

  std::filesystem::path path_;
  std::uint32_t register_width_ = 0;
  std::vector<EfpkDescriptor> descriptors_;
  std::vector<std::uint32_t> layer_ids_;
  std::vector<std::size_t> layer_first_;  // first descriptor per layer, + end
  std::uint64_t header_bytes_ = 0;
  std::uint64_t file_size_ = 0;
};

// Single-consumer sequential layer iterator over one open file handle.
class EfpkLayerStream {
 public:
  explicit EfpkLayerStream(const std::filesystem::path& path);

  // Next layer in ascending id order, nullopt at end of file.
  std::optional<EfpkLayer> next();

  const EfpkReader& reader() const { return reader_; }
  // Header + descriptor bytes as read from disk.
  const std::vector<std::uint8_t>& header_raw() const { return header_raw_; }
  std::uint64_t bytes_read() const { return bytes_read_; }

 private:
  EfpkReader reader_;
  std::ifstream in_;
  std::vector<std::uint8_t> header_raw_;
  std::size_t next_ = 0;
  std::uint64_t bytes_read_ = 0;
};

}  // namespace coldpack

#endif  // COLDPACK_TENSORSTORE_HPP
