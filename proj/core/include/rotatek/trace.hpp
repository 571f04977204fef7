#pragma once

// RTKC tensor container.
//
//   offset  size  field
//   0       4     magic "RTKC"
//   4       4     format version, u32 little-endian (currently 1)
//   8       4     header length H, u32 little-endian
//   12      H     JSON header: {"kind", "attributes", "tensors": [manifest]}
//   12+H    ...   payload: tensors back to back in manifest order,
//                 row-major, little-endian
//
// Each manifest entry carries name, dtype (f32 | f64 | u8), shape, segment,
// byte offset (relative to the payload start) and byte count. The payload
// length must equal the sum of the declared byte counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rotatek/cache.hpp"
#include "rotatek/error.hpp"
#include "rotatek/linalg.hpp"

namespace rotatek {

inline constexpr std::array<char, 4> kTraceMagic = {'R', 'T', 'K', 'C'};
inline constexpr std::uint32_t kTraceVersion = 1;

enum class TraceErrc {
  io,
  bad_magic,
  unsupported_version,
  truncated_header,
  malformed_header,
  manifest_mismatch,
  truncated_payload,
  non_finite,
};

class TraceError : public Error {
 public:
  TraceError(TraceErrc code, const std::string& what) : Error(ErrorKind::data, "trace", what), code_(code) {}
  TraceErrc code() const noexcept { return code_; }

 private:
  TraceErrc code_;
};

class IoError : public TraceError {
 public:
  explicit IoError(const std::string& what) : TraceError(TraceErrc::io, what) {}
};

class BadMagic : public TraceError {
 public:
  explicit BadMagic(std::vector<std::uint8_t> found);
  const std::vector<std::uint8_t>& found() const noexcept { return found_; }

 private:
  std::vector<std::uint8_t> found_;
};

class UnsupportedVersion : public TraceError {
 public:
  explicit UnsupportedVersion(std::uint32_t found)
      : TraceError(TraceErrc::unsupported_version,
                   "unsupported container version " + std::to_string(found) + " (this build reads version " +
                       std::to_string(kTraceVersion) + ")"),
        found_(found) {}
  std::uint32_t found() const noexcept { return found_; }

 private:
  std::uint32_t found_;
};

class TruncatedHeader : public TraceError {
 public:
  TruncatedHeader(std::size_t expected, std::size_t actual)
      : TraceError(TraceErrc::truncated_header, "truncated header: expected " + std::to_string(expected) +
                                                    " bytes, found " + std::to_string(actual)) {}
};

class MalformedHeader : public TraceError {
 public:
  explicit MalformedHeader(const std::string& what)
      : TraceError(TraceErrc::malformed_header, "malformed header: " + what) {}
};

class ManifestMismatch : public TraceError {
 public:
  explicit ManifestMismatch(const std::string& what)
      : TraceError(TraceErrc::manifest_mismatch, "manifest mismatch: " + what) {}
};

class TruncatedPayload : public TraceError {
 public:
  TruncatedPayload(std::uint64_t expected, std::uint64_t actual)
      : TraceError(TraceErrc::truncated_payload, "truncated payload: expected " + std::to_string(expected) +
                                                     " bytes, found " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  std::uint64_t expected() const noexcept { return expected_; }
  std::uint64_t actual() const noexcept { return actual_; }

 private:
  std::uint64_t expected_;
  std::uint64_t actual_;
};

class NonFiniteValue : public TraceError {
 public:
  NonFiniteValue(const std::string& tensor, std::uint64_t index)
      : TraceError(TraceErrc::non_finite,
                   "non-finite value in tensor '" + tensor + "' at element " + std::to_string(index)),
        tensor_(tensor),
        index_(index) {}
  const std::string& tensor() const noexcept { return tensor_; }
  std::uint64_t index() const noexcept { return index_; }

 private:
  std::string tensor_;
  std::uint64_t index_;
};

enum class DType { f32, f64, u8 };

struct TensorEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint64_t> shape;
  std::string segment;
  std::vector<std::byte> bytes;  // little-endian element data
};

struct Container {
  std::string kind;
  std::map<std::string, std::int64_t> attributes;
  std::vector<TensorEntry> tensors;

  const TensorEntry& tensor(const std::string& name) const;  // throws ManifestMismatch
  std::int64_t attribute(const std::string& key) const;      // throws MalformedHeader
};

std::vector<std::byte> encode_container(const Container& c);
Container decode_container(std::span<const std::byte> bytes);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

// Little-endian element packing.
std::vector<std::byte> pack_f32(std::span<const float> values);
std::vector<std::byte> pack_f64(std::span<const double> values);
std::vector<float> unpack_f32(std::span<const std::byte> bytes);
std::vector<double> unpack_f64(std::span<const std::byte> bytes);

// Prefill activations for several layers.
struct TraceData {
  SequenceLayout layout;  // n_visual + n_text tokens per sequence
  std::size_t layers = 1;
  std::vector<MatrixF> queries;  // [layer·heads_q + h], (n_visual+n_text)×d
  std::vector<MatrixF> keys;     // [layer·heads_kv + h]
  std::vector<MatrixF> values;   // [layer·heads_kv + h]
  std::vector<std::uint8_t> token_mask;  // empty, or n_visual entries of 0/1

  std::size_t seq_len() const noexcept { return layout.n_visual + layout.n_text; }
  const MatrixF& query(std::size_t layer, std::size_t h) const { return queries[layer * layout.heads_q + h]; }
  const MatrixF& key(std::size_t layer, std::size_t h) const { return keys[layer * layout.heads_kv + h]; }
  const MatrixF& value(std::size_t layer, std::size_t h) const { return values[layer * layout.heads_kv + h]; }

  // Throws ManifestMismatch on inconsistent shapes.
  void validate() const;
};

std::vector<std::byte> encode_trace(const TraceData& trace);
TraceData decode_trace(std::span<const std::byte> bytes);

void trace_write(const std::filesystem::path& path, const TraceData& trace);
TraceData trace_read(const std::filesystem::path& path);

// Compressed caches use the same container with kind "compressed_cache" and
// segment-tagged tensors (visual / text / rotation).
std::vector<std::byte> encode_cache(const CompressedCache& cache);
CompressedCache decode_cache(std::span<const std::byte> bytes);

}  // namespace rotatek
