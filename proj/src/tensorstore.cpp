// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#include "coldpack/tensorstore.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <set>

#include <Eigen/Core>
#include <json.hpp>

#include "coldpack/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swaps");

namespace coldpack {
namespace {

constexpr char kArchiveMagic[4] = {'C', 'P', 'T', 'A'};
constexpr std::uint32_t kArchiveVersion = 1;

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> b) {
  out.insert(out.end(), b.begin(), b.end());
}

// Cursor over an in-memory buffer.
class SpanSource {
 public:
  explicit SpanSource(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, ErrorCode on_short) {
    if (n > bytes_.size() - pos_) {
      fail(on_short, "unexpected end of data (need " + std::to_string(n) +
                         " bytes at offset " + std::to_string(pos_) + ")");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Cursor over a file stream that keeps a copy of everything consumed.
class StreamSource {
 public:
  StreamSource(std::ifstream& in, std::vector<std::uint8_t>& record)
      : in_(in), record_(record) {}

  std::span<const std::uint8_t> take(std::size_t n, ErrorCode on_short) {
    const std::size_t at = record_.size();
    record_.resize(at + n);
    in_.read(reinterpret_cast<char*>(record_.data() + at),
             static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail(on_short, "unexpected end of file (need " + std::to_string(n) +
                         " bytes at offset " + std::to_string(at) + ")");
    }
    return std::span<const std::uint8_t>(record_).subspan(at, n);
  }
  std::uint64_t position() const { return record_.size(); }

 private:
  std::ifstream& in_;
  std::vector<std::uint8_t>& record_;
};

template <class T, class Source>
T get(Source& src, ErrorCode on_short = ErrorCode::kTruncated) {
  T value;
  std::memcpy(&value, src.take(sizeof(T), on_short).data(), sizeof(T));
  return value;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) fail(ErrorCode::kIo, "failed reading " + path.string());
  return bytes;
}

std::uint64_t spill(std::span<const std::uint8_t> bytes,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
  return bytes.size();
}

std::vector<float> floats_from(std::span<const std::uint8_t> bytes) {
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), v.size() * sizeof(float));
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(float));
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in slices.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n =
        std::min<std::size_t>(bytes.size() - pos, std::numeric_limits<uInt>::max());
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

// ---------------------------------------------------------------------------
// Tensor archive

std::size_t dtype_size(DType dtype) {
  return dtype == DType::kF32 ? 4 : 2;
}

std::string_view dtype_name(DType dtype) {
  return dtype == DType::kF32 ? "f32" : "f16";
}

Eigen::MatrixXf ArchiveTensor::values() const {
  const auto d = static_cast<Eigen::Index>(rows);
  const auto c = static_cast<Eigen::Index>(cols);
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowMajorH = Eigen::Matrix<Eigen::half, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (payload.size() != static_cast<std::size_t>(d * c) * dtype_size(dtype)) {
    fail(ErrorCode::kTruncated, "payload size mismatch for tensor " + name);
  }
  if (dtype == DType::kF32) {
    RowMajorF m(d, c);
    std::memcpy(m.data(), payload.data(), payload.size());
    return m;
  }
  RowMajorH m(d, c);
  std::memcpy(m.data(), payload.data(), payload.size());
  return m.cast<float>();
}

void TensorArchive::add(std::string name, std::uint32_t layer,
                        const Eigen::MatrixXf& values, DType dtype) {
  if (find(name) != nullptr) fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + name);
  ArchiveTensor t;
  t.name = std::move(name);
  t.rows = static_cast<std::uint32_t>(values.rows());
  t.cols = static_cast<std::uint32_t>(values.cols());
  t.dtype = dtype;
  if (dtype == DType::kF32) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = values;
    t.payload.resize(static_cast<std::size_t>(rm.size()) * 4);
    std::memcpy(t.payload.data(), rm.data(), t.payload.size());
  } else {
    const Eigen::Matrix<Eigen::half, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        values.cast<Eigen::half>();
    t.payload.resize(static_cast<std::size_t>(rm.size()) * 2);
    std::memcpy(t.payload.data(), rm.data(), t.payload.size());
  }
  layer_index[layer].push_back(t.name);
  tensors.push_back(std::move(t));
}

const ArchiveTensor* TensorArchive::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::optional<std::uint32_t> TensorArchive::layer_of(std::string_view name) const {
  for (const auto& [layer, names] : layer_index) {
    if (std::find(names.begin(), names.end(), name) != names.end()) return layer;
  }
  return std::nullopt;
}

void TensorArchive::validate() const {
  std::set<std::string_view> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) {
      fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + t.name);
    }
    if (t.rows == 0 || t.cols == 0) {
      fail(ErrorCode::kMalformedHeader, "tensor " + t.name + " has an empty dimension");
    }
    const std::uint64_t want =
        static_cast<std::uint64_t>(t.rows) * t.cols * dtype_size(t.dtype);
    if (t.payload.size() != want) {
      fail(ErrorCode::kTruncated, "tensor " + t.name + " payload holds " +
                                      std::to_string(t.payload.size()) +
                                      " bytes, expected " + std::to_string(want));
    }
  }
  std::set<std::string_view> indexed;
  for (const auto& [layer, list] : layer_index) {
    for (const auto& n : list) {
      if (!names.count(n)) {
        fail(ErrorCode::kMalformedHeader, "layer index names unknown tensor " + n);
      }
      if (!indexed.insert(n).second) {
        fail(ErrorCode::kDuplicateName, "tensor " + n + " indexed under two layers");
      }
    }
  }
}

std::vector<std::uint8_t> serialize_tensor_archive(const TensorArchive& archive) {
  archive.validate();
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : archive.tensors) {
    header["tensors"].push_back({{"name", t.name},
                                 {"rows", t.rows},
                                 {"cols", t.cols},
                                 {"dtype", dtype_name(t.dtype)},
                                 {"offset", offset},
                                 {"size", t.payload.size()}});
    offset += t.payload.size();
  }
  header["layers"] = nlohmann::json::object();
  for (const auto& [layer, names] : archive.layer_index) {
    header["layers"][std::to_string(layer)] = names;
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  put_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(kArchiveMagic), 4));
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint64_t>(out, text.size());
  put_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  for (const auto& t : archive.tensors) put_bytes(out, t.payload);
  return out;
}

TensorArchive parse_tensor_archive(std::span<const std::uint8_t> bytes) {
  SpanSource src(bytes);
  const auto magic = src.take(4, ErrorCode::kMalformedHeader);
  if (std::memcmp(magic.data(), kArchiveMagic, 4) != 0) {
    fail(ErrorCode::kMalformedHeader, "not a tensor archive (bad magic)");
  }
  const auto version = get<std::uint32_t>(src, ErrorCode::kMalformedHeader);
  if (version != kArchiveVersion) {
    fail(ErrorCode::kMalformedHeader,
         "unsupported tensor archive version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(src, ErrorCode::kMalformedHeader);
  if (header_len > bytes.size()) {
    fail(ErrorCode::kMalformedHeader, "header length exceeds file size");
  }
  const auto text = src.take(static_cast<std::size_t>(header_len),
                             ErrorCode::kMalformedHeader);
  const std::uint64_t payload_base = src.position();

  TensorArchive archive;
  try {
    const auto header = nlohmann::json::parse(text.begin(), text.end());
    std::set<std::string> seen;
    for (const auto& d : header.at("tensors")) {
      ArchiveTensor t;
      t.name = d.at("name").get<std::string>();
      if (!seen.insert(t.name).second) {
        fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + t.name);
      }
      t.rows = d.at("rows").get<std::uint32_t>();
      t.cols = d.at("cols").get<std::uint32_t>();
      const auto dtype = d.at("dtype").get<std::string>();
      if (dtype == "f32") {
        t.dtype = DType::kF32;
      } else if (dtype == "f16") {
        t.dtype = DType::kF16;
      } else {
        fail(ErrorCode::kMalformedHeader, "unknown dtype " + dtype);
      }
      const auto offset = d.at("offset").get<std::uint64_t>();
      const auto size = d.at("size").get<std::uint64_t>();
      if (t.rows == 0 || t.cols == 0 ||
          size != static_cast<std::uint64_t>(t.rows) * t.cols * dtype_size(t.dtype)) {
        fail(ErrorCode::kMalformedHeader,
             "tensor " + t.name + " declares an inconsistent shape/size");
      }
      if (payload_base + offset + size > bytes.size()) {
        fail(ErrorCode::kTruncated, "payload of tensor " + t.name + " is truncated");
      }
      const auto* p = bytes.data() + payload_base + offset;
      t.payload.assign(p, p + size);
      archive.tensors.push_back(std::move(t));
    }
    for (const auto& [key, names] : header.at("layers").items()) {
      std::size_t used = 0;
      const unsigned long id = std::stoul(key, &used);
      if (used != key.size() || id > std::numeric_limits<std::uint32_t>::max()) {
        fail(ErrorCode::kMalformedHeader, "bad layer id " + key);
      }
      archive.layer_index[static_cast<std::uint32_t>(id)] =
          names.get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kMalformedHeader, std::string("malformed archive header: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::kMalformedHeader, "malformed layer id in archive header");
  } catch (const std::out_of_range&) {
    fail(ErrorCode::kMalformedHeader, "malformed layer id in archive header");
  }
  archive.validate();
  return archive;
}

std::uint64_t write_tensor_archive(const TensorArchive& archive,
                                   const std::filesystem::path& path) {
  return spill(serialize_tensor_archive(archive), path);
}

TensorArchive read_tensor_archive(const std::filesystem::path& path) {
  return parse_tensor_archive(slurp(path));
}

// ---------------------------------------------------------------------------
// EFPK

namespace {

constexpr std::size_t kFixedHeaderBytes = 16;

std::uint64_t smoothing_bytes(std::uint32_t rows, std::uint32_t cols) {
  return 4ull * (static_cast<std::uint64_t>(rows) + cols);
}

void put_descriptor(std::vector<std::uint8_t>& out, const EfpkDescriptor& d) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(d.name.size()));
  put_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(d.name.data()), d.name.size()));
  put<std::uint32_t>(out, d.layer);
  put<std::uint32_t>(out, d.rows);
  put<std::uint32_t>(out, d.cols);
  put<std::uint32_t>(out, d.padded_rows);
  put<std::uint8_t>(out, d.has_smoothing ? 1 : 0);
  put<double>(out, d.alpha);
  put<double>(out, d.beta);
  put<float>(out, d.activation_scale);
  put<std::uint64_t>(out, d.metadata_offset);
  put<std::uint64_t>(out, d.metadata_size);
  put<std::uint64_t>(out, d.scales_offset);
  put<std::uint64_t>(out, d.scales_size);
  put<std::uint64_t>(out, d.smoothing_offset);
  put<std::uint64_t>(out, d.smoothing_size);
  put<std::uint64_t>(out, d.blocks_offset);
  put<std::uint64_t>(out, d.blocks_size);
  put<std::uint32_t>(out, d.blocks_crc32);
}

std::size_t descriptor_bytes(const std::string& name) {
  return 2 + name.size() + 4 * 4 + 1 + 8 + 8 + 4 + 8 * 8 + 4;
}

template <class Source>
EfpkDescriptor get_descriptor(Source& src) {
  EfpkDescriptor d;
  const auto name_len = get<std::uint16_t>(src);
  const auto name = src.take(name_len, ErrorCode::kTruncated);
  d.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
  d.layer = get<std::uint32_t>(src);
  d.rows = get<std::uint32_t>(src);
  d.cols = get<std::uint32_t>(src);
  d.padded_rows = get<std::uint32_t>(src);
  const auto flag = get<std::uint8_t>(src);
  if (flag > 1) fail(ErrorCode::kCorrupt, "bad smoothing flag in " + d.name);
  d.has_smoothing = flag == 1;
  d.alpha = get<double>(src);
  d.beta = get<double>(src);
  d.activation_scale = get<float>(src);
  d.metadata_offset = get<std::uint64_t>(src);
  d.metadata_size = get<std::uint64_t>(src);
  d.scales_offset = get<std::uint64_t>(src);
  d.scales_size = get<std::uint64_t>(src);
  d.smoothing_offset = get<std::uint64_t>(src);
  d.smoothing_size = get<std::uint64_t>(src);
  d.blocks_offset = get<std::uint64_t>(src);
  d.blocks_size = get<std::uint64_t>(src);
  d.blocks_crc32 = get<std::uint32_t>(src);
  return d;
}

struct EfpkHeader {
  std::uint32_t register_width = 0;
  std::vector<EfpkDescriptor> descriptors;
  std::uint64_t header_bytes = 0;
};

template <class Source>
EfpkHeader get_header(Source& src) {
  const auto magic = src.take(4, ErrorCode::kTruncated);
  if (std::memcmp(magic.data(), kEfpkMagic, 4) != 0) {
    fail(ErrorCode::kMalformedHeader, "not an EFPK file (bad magic)");
  }
  const auto version = get<std::uint32_t>(src);
  if (version != kEfpkVersion) {
    fail(ErrorCode::kMalformedHeader, "unsupported EFPK version " + std::to_string(version));
  }
  EfpkHeader h;
  h.register_width = get<std::uint32_t>(src);
  if (h.register_width > 1u << 16) {
    fail(ErrorCode::kMalformedHeader, "implausible register width");
  }
  pack::check_register_width(static_cast<int>(h.register_width));
  const auto count = get<std::uint32_t>(src);
  for (std::uint32_t i = 0; i < count; ++i) h.descriptors.push_back(get_descriptor(src));
  h.header_bytes = src.position();
  return h;
}

// Every tensor's sections must tile the file contiguously after the header,
// in descriptor order, with descriptors in ascending layer order.
void validate_layout(const EfpkHeader& h, std::uint64_t file_size) {
  std::uint64_t cursor = h.header_bytes;
  std::set<std::string> names;
  for (std::size_t i = 0; i < h.descriptors.size(); ++i) {
    const auto& d = h.descriptors[i];
    if (!names.insert(d.name).second) {
      fail(ErrorCode::kDuplicateName, "duplicate tensor name: " + d.name);
    }
    if (i > 0 && h.descriptors[i - 1].layer > d.layer) {
      fail(ErrorCode::kOutOfOrder, "descriptor " + d.name + " breaks ascending layer order");
    }
    if (d.rows == 0 || d.cols == 0 ||
        d.padded_rows != pack::padded_rows(d.rows, static_cast<int>(h.register_width))) {
      fail(ErrorCode::kCorrupt, "descriptor " + d.name + " has inconsistent dimensions");
    }
    if (d.metadata_size != pack::metadata_bytes(d.cols) || d.scales_size != 4ull * d.cols ||
        d.smoothing_size != (d.has_smoothing ? smoothing_bytes(d.rows, d.cols) : 0) ||
        d.blocks_size > static_cast<std::uint64_t>(d.padded_rows) * d.cols) {
      fail(ErrorCode::kCorrupt, "descriptor " + d.name + " has inconsistent section sizes");
    }
    const std::pair<std::uint64_t, std::uint64_t> sections[] = {
        {d.metadata_offset, d.metadata_size},
        {d.scales_offset, d.scales_size},
        {d.smoothing_offset, d.smoothing_size},
        {d.blocks_offset, d.blocks_size}};
    for (const auto& [offset, size] : sections) {
      if (offset < cursor) {
        fail(ErrorCode::kCorrupt, "overlapping section offsets in " + d.name);
      }
      if (offset != cursor) {
        fail(ErrorCode::kCorrupt, "unaccounted gap before a section of " + d.name);
      }
      if (offset + size > file_size) {
        fail(ErrorCode::kTruncated, "section of " + d.name + " extends past end of file");
      }
      cursor = offset + size;
    }
  }
  if (cursor != file_size) {
    fail(ErrorCode::kCorrupt, "trailing bytes after the last tensor");
  }
}

// Decodes one tensor from the bytes of its data region.
PackedTensorRecord decode_tensor(const EfpkDescriptor& d, std::uint32_t register_width,
                                 std::span<const std::uint8_t> region,
                                 std::uint64_t region_offset) {
  auto section = [&](std::uint64_t offset, std::uint64_t size) {
    return region.subspan(static_cast<std::size_t>(offset - region_offset),
                          static_cast<std::size_t>(size));
  };
  PackedTensorRecord r;
  r.name = d.name;
  r.layer = d.layer;
  r.activation_scale = d.activation_scale;
  auto& p = r.packed;
  p.rows = d.rows;
  p.cols = d.cols;
  p.padded_rows = d.padded_rows;
  p.register_width = register_width;
  const auto meta = section(d.metadata_offset, d.metadata_size);
  p.metadata.assign(meta.begin(), meta.end());
  p.channel_bits = pack::decode_bitwidth_metadata(p.metadata, d.cols);
  p.scales = floats_from(section(d.scales_offset, d.scales_size));
  const auto blocks = section(d.blocks_offset, d.blocks_size);
  if (crc32(blocks) != d.blocks_crc32) {
    fail(ErrorCode::kChecksumMismatch, "block checksum mismatch in " + d.name);
  }
  p.blocks.assign(blocks.begin(), blocks.end());
  if (p.blocks.size() != p.expected_block_bytes()) {
    fail(ErrorCode::kCorrupt, "block section of " + d.name +
                                  " disagrees with its bit-width metadata");
  }
  if (d.has_smoothing) {
    const auto sm = floats_from(section(d.smoothing_offset, d.smoothing_size));
    StoredSmoothing s;
    s.alpha = d.alpha;
    s.beta = d.beta;
    s.s_in.assign(sm.begin(), sm.begin() + d.rows);
    s.s_out.assign(sm.begin() + d.rows, sm.end());
    r.smoothing = std::move(s);
  }
  return r;
}

}  // namespace

std::vector<std::uint8_t> serialize_efpk(const QuantizedPackedModel& model) {
  model.validate();
  if (model.tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::kOverflow, "too many tensors for an EFPK descriptor table");
  }
  std::uint64_t header = kFixedHeaderBytes;
  for (const auto& t : model.tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::kOverflow, "tensor name too long: " + t.name.substr(0, 32));
    }
    header += descriptor_bytes(t.name);
  }

  std::vector<EfpkDescriptor> descriptors;
  std::uint64_t cursor = header;
  for (const auto& t : model.tensors) {
    EfpkDescriptor d;
    d.name = t.name;
    d.layer = t.layer;
    d.rows = t.packed.rows;
    d.cols = t.packed.cols;
    d.padded_rows = t.packed.padded_rows;
    d.has_smoothing = t.smoothing.has_value();
    if (t.smoothing) {
      d.alpha = t.smoothing->alpha;
      d.beta = t.smoothing->beta;
    }
    d.activation_scale = t.activation_scale;
    d.metadata_offset = cursor;
    d.metadata_size = t.packed.metadata.size();
    d.scales_offset = d.metadata_offset + d.metadata_size;
    d.scales_size = 4ull * t.packed.scales.size();
    d.smoothing_offset = d.scales_offset + d.scales_size;
    d.smoothing_size = d.has_smoothing ? smoothing_bytes(d.rows, d.cols) : 0;
    d.blocks_offset = d.smoothing_offset + d.smoothing_size;
    d.blocks_size = t.packed.blocks.size();
    d.blocks_crc32 = crc32(t.packed.blocks);
    cursor = d.data_end();
    descriptors.push_back(std::move(d));
  }

  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(cursor));
  put_bytes(out, std::span(reinterpret_cast<const std::uint8_t*>(kEfpkMagic), 4));
  put<std::uint32_t>(out, kEfpkVersion);
  put<std::uint32_t>(out, model.register_width);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.tensors.size()));
  for (const auto& d : descriptors) put_descriptor(out, d);
  for (const auto& t : model.tensors) {
    put_bytes(out, t.packed.metadata);
    put_floats(out, t.packed.scales);
    if (t.smoothing) {
      put_floats(out, t.smoothing->s_in);
      put_floats(out, t.smoothing->s_out);
    }
    put_bytes(out, t.packed.blocks);
  }
  return out;
}

QuantizedPackedModel parse_efpk(std::span<const std::uint8_t> bytes) {
  SpanSource src(bytes);
  const EfpkHeader h = get_header(src);
  validate_layout(h, bytes.size());
  QuantizedPackedModel model;
  model.register_width = h.register_width;
  for (const auto& d : h.descriptors) {
    model.tensors.push_back(decode_tensor(d, h.register_width, bytes, 0));
  }
  model.validate();
  return model;
}

std::uint64_t write_efpk(const QuantizedPackedModel& model,
                         const std::filesystem::path& path) {
  return spill(serialize_efpk(model), path);
}

QuantizedPackedModel read_efpk(const std::filesystem::path& path) {
  return parse_efpk(slurp(path));
}

// ---------------------------------------------------------------------------
// Layer readers

EfpkReader EfpkReader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> raw;
  StreamSource src(in, raw);
  EfpkHeader h = get_header(src);
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot stat " + path.string());
  validate_layout(h, size);

  EfpkReader r;
  r.assign(path, std::move(h.descriptors), h.register_width, h.header_bytes, size);
  return r;
}

void EfpkReader::assign(const std::filesystem::path& path,
                        std::vector<EfpkDescriptor> descriptors,
                        std::uint32_t register_width, std::uint64_t header_bytes,
                        std::uint64_t file_size) {
  path_ = path;
  register_width_ = register_width;
  descriptors_ = std::move(descriptors);
  header_bytes_ = header_bytes;
  file_size_ = file_size;
  layer_ids_.clear();
  layer_first_.clear();
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    if (layer_ids_.empty() || layer_ids_.back() != descriptors_[i].layer) {
      layer_ids_.push_back(descriptors_[i].layer);
      layer_first_.push_back(i);
    }
  }
  layer_first_.push_back(descriptors_.size());
}

EfpkLayer EfpkReader::decode_layer(std::size_t position,
                                   std::vector<std::uint8_t> raw) const {
  const std::size_t first = layer_first_[position];
  const std::size_t last = layer_first_[position + 1];
  EfpkLayer layer;
  layer.layer = layer_ids_[position];
  layer.offset = descriptors_[first].data_begin();
  for (std::size_t i = first; i < last; ++i) {
    layer.tensors.push_back(
        decode_tensor(descriptors_[i], register_width_, raw, layer.offset));
  }
  layer.raw = std::move(raw);
  return layer;
}

EfpkLayer EfpkReader::read_layer(std::size_t position) const {
  if (position >= layer_ids_.size()) {
    fail(ErrorCode::kInvalidArgument, "layer position out of range");
  }
  const std::uint64_t begin = descriptors_[layer_first_[position]].data_begin();
  const std::uint64_t end = descriptors_[layer_first_[position + 1] - 1].data_end();
  std::ifstream in(path_, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path_.string());
  in.seekg(static_cast<std::streamoff>(begin));
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(end - begin));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    fail(ErrorCode::kTruncated, "layer data truncated in " + path_.string());
  }
  return decode_layer(position, std::move(raw));
}

EfpkLayerStream::EfpkLayerStream(const std::filesystem::path& path)
    : in_(path, std::ios::binary) {
  if (!in_) fail(ErrorCode::kIo, "cannot open " + path.string());
  StreamSource src(in_, header_raw_);
  EfpkHeader h = get_header(src);
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot stat " + path.string());
  validate_layout(h, size);
  reader_.assign(path, std::move(h.descriptors), h.register_width,
                 h.header_bytes, size);
  bytes_read_ = header_raw_.size();
}

std::optional<EfpkLayer> EfpkLayerStream::next() {
  if (next_ >= reader_.layer_ids_.size()) return std::nullopt;
  const auto& ds = reader_.descriptors_;
  const std::uint64_t begin = ds[reader_.layer_first_[next_]].data_begin();
  const std::uint64_t end = ds[reader_.layer_first_[next_ + 1] - 1].data_end();
  if (begin != bytes_read_) {
    fail(ErrorCode::kCorrupt, "layer data does not start where the previous one ended");
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(end - begin));
  in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in_.gcount()) != raw.size()) {
    fail(ErrorCode::kTruncated, "layer data truncated");
  }
  bytes_read_ += raw.size();
  return reader_.decode_layer(next_++, std::move(raw));
}

}  // namespace coldpack
