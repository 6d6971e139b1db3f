#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/nn.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Per-channel input normalization applied on the pretrained-backbone path.
struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

inline constexpr std::uint32_t kWeightArchiveVersion = 1;

// Named float32 tensors plus a JSON manifest.
//
// File layout (all integers little-endian):
//   "FSLWARC\0" | u32 version | u32 manifest_bytes | manifest JSON | payload
// The payload is the row-major f32 data of every tensor, in manifest order.
// The manifest records shape and CRC-32 per tensor.
struct WeightArchive {
  std::vector<NamedTensor> tensors;
  Normalization normalization;
  nlohmann::json metadata = nlohmann::json::object();

  bool contains(std::string_view name) const;
  // Throws FormatError naming the missing tensor.
  const Tensor& get(std::string_view name) const;
  void add(std::string name, Tensor tensor);
  std::size_t payload_bytes() const;
};

void save_weight_archive(const std::filesystem::path& path, const WeightArchive& archive);
// Errors: FormatError (bad magic, malformed manifest, trailing bytes),
// VersionMismatchError, TruncatedPayloadError, ChecksumError.
WeightArchive load_weight_archive(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const float> values);

// FNV-1a over names, shapes and values; `salt` folds in non-tensor settings
// such as the input resolution.
std::uint64_t fingerprint_tensors(std::span<const NamedTensor> tensors, std::uint64_t salt = 0);

struct EmbeddingRecord {
  std::int32_t class_id = 0;
  std::int32_t image_index = 0;
  std::vector<float> values;
};

// "FSLEMB1\0" | u32 dim | u64 count | u64 fingerprint | records
// record: i32 class_id | i32 image_index | dim x f32
struct EmbeddingCache {
  std::uint32_t dim = 0;
  std::uint64_t fingerprint = 0;
  std::vector<EmbeddingRecord> records;
};

// ShapeError if any record's length differs from `dim`.
void write_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache);
// StaleCacheError when `expected_fingerprint` is given and differs.
EmbeddingCache read_embedding_cache(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> expected_fingerprint = std::nullopt);
// Header-only read.
std::uint64_t read_cache_fingerprint(const std::filesystem::path& path);

}  // namespace fsl
