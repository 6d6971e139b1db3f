#include "fsl/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <zlib.h>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

constexpr char kArchiveMagic[8] = {'F', 'S', 'L', 'W', 'A', 'R', 'C', '\0'};
constexpr char kCacheMagic[8] = {'F', 'S', 'L', 'E', 'M', 'B', '1', '\0'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void scalar(T v) {
    v = to_little(v);
    bytes(&v, sizeof v);
  }
  void floats(std::span<const float> v) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(v.data(), v.size_bytes());
    } else {
      for (float f : v) scalar(f);
    }
  }
  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw FormatError("write failed: " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& path() const { return path_; }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw TruncatedPayloadError(fmt::format("{}: truncated while reading {} ({} of {} bytes)",
                                              path_, what, remaining(), n));
    }
  }
  void bytes(void* dst, std::size_t n, std::string_view what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T scalar(std::string_view what) {
    T v;
    bytes(&v, sizeof v, what);
    return to_little(v);
  }
  void floats(std::span<float> dst, std::string_view what) {
    bytes(dst.data(), dst.size_bytes(), what);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& f : dst) f = to_little(f);
    }
  }
  void expect_magic(const char (&magic)[8], std::string_view kind) {
    char got[8];
    if (remaining() < 8) throw FormatError(fmt::format("{}: not a {} (file too short)", path_, kind));
    bytes(got, 8, "magic");
    if (std::memcmp(got, magic, 8) != 0) throw FormatError(fmt::format("{}: not a {} (bad magic)", path_, kind));
  }
  void expect_end() const {
    if (remaining() != 0) throw FormatError(fmt::format("{}: {} unexpected trailing bytes", path_, remaining()));
  }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::uint64_t h, const void* p, std::size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= c[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

bool WeightArchive::contains(std::string_view name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
}

const Tensor& WeightArchive::get(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError(fmt::format("weight archive has no tensor named '{}'", name));
}

void WeightArchive::add(std::string name, Tensor tensor) {
  if (contains(name)) throw FormatError(fmt::format("duplicate tensor name '{}'", name));
  tensors.push_back({std::move(name), std::move(tensor)});
}

std::size_t WeightArchive::payload_bytes() const {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.tensor.numel() * sizeof(float);
  return total;
}

std::uint32_t crc32_of(std::span<const float> values) {
  uLong crc = crc32(0L, Z_NULL, 0);
  if constexpr (std::endian::native == std::endian::little) {
    // zlib takes uInt lengths; feed in bounded pieces.
    const auto* p = reinterpret_cast<const Bytef*>(values.data());
    std::size_t left = values.size_bytes();
    while (left > 0) {
      const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
      crc = crc32(crc, p, n);
      p += n;
      left -= n;
    }
  } else {
    for (float f : values) {
      f = to_little(f);
      crc = crc32(crc, reinterpret_cast<const Bytef*>(&f), sizeof f);
    }
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint64_t fingerprint_tensors(std::span<const NamedTensor> tensors, std::uint64_t salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  salt = to_little(salt);
  h = fnv1a(h, &salt, sizeof salt);
  for (const auto& t : tensors) {
    h = fnv1a(h, t.name.data(), t.name.size() + 1);
    for (std::size_t extent : t.tensor.shape()) {
      const auto e = to_little(static_cast<std::uint64_t>(extent));
      h = fnv1a(h, &e, sizeof e);
    }
    for (float f : t.tensor.data()) {
      f = to_little(f);
      h = fnv1a(h, &f, sizeof f);
    }
  }
  return h;
}

void save_weight_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  nlohmann::json roster = nlohmann::json::array();
  for (const auto& t : archive.tensors) {
    roster.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"crc32", crc32_of(t.tensor.data())}});
  }
  const nlohmann::json manifest = {
      {"format_version", kWeightArchiveVersion},
      {"dtype", "float32"},
      {"normalization", {{"mean", archive.normalization.mean}, {"std", archive.normalization.std}}},
      {"metadata", archive.metadata},
      {"tensors", roster},
  };
  const std::string text = manifest.dump();
  Writer w;
  w.bytes(kArchiveMagic, sizeof kArchiveMagic);
  w.scalar<std::uint32_t>(kWeightArchiveVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  for (const auto& t : archive.tensors) w.floats(t.tensor.data());
  w.flush(path);
}

WeightArchive load_weight_archive(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kArchiveMagic, "weight archive");
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kWeightArchiveVersion) {
    throw VersionMismatchError(fmt::format("{}: archive format version {} (expected {})", r.path(),
                                           version, kWeightArchiveVersion));
  }
  const auto manifest_len = r.scalar<std::uint32_t>("manifest length");
  std::string text(manifest_len, '\0');
  r.bytes(text.data(), manifest_len, "manifest");

  WeightArchive archive;
  std::vector<std::pair<Shape, std::uint32_t>> entries;
  std::vector<std::string> names;
  try {
    const auto manifest = nlohmann::json::parse(text);
    if (manifest.at("format_version").get<std::uint32_t>() != kWeightArchiveVersion) {
      throw VersionMismatchError(fmt::format("{}: manifest format_version {} (expected {})", r.path(),
                                             manifest.at("format_version").dump(), kWeightArchiveVersion));
    }
    if (manifest.at("dtype") != "float32") {
      throw FormatError(fmt::format("{}: unsupported dtype {}", r.path(), manifest.at("dtype").dump()));
    }
    const auto& norm = manifest.at("normalization");
    archive.normalization.mean = norm.at("mean").get<std::array<float, 3>>();
    archive.normalization.std = norm.at("std").get<std::array<float, 3>>();
    archive.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
      names.push_back(entry.at("name").get<std::string>());
      entries.emplace_back(entry.at("shape").get<Shape>(), entry.at("crc32").get<std::uint32_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: malformed manifest: {}", r.path(), e.what()));
  }

  std::size_t expected = 0;
  for (const auto& [shape, crc] : entries) expected += shape_numel(shape) * sizeof(float);
  if (r.remaining() < expected) {
    throw TruncatedPayloadError(fmt::format("{}: payload has {} bytes, manifest needs {}", r.path(),
                                            r.remaining(), expected));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [shape, crc] = entries[i];
    Tensor t(shape);
    r.floats(t.mutable_data(), names[i]);
    const std::uint32_t got = crc32_of(t.data());
    if (got != crc) {
      throw ChecksumError(names[i], fmt::format("{}: checksum mismatch in tensor '{}' (stored {:08x}, computed {:08x})",
                                                r.path(), names[i], crc, got));
    }
    archive.add(names[i], std::move(t));
  }
  r.expect_end();
  return archive;
}

void write_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache) {
  for (const auto& rec : cache.records) {
    if (rec.values.size() != cache.dim) {
      throw ShapeError(fmt::format("embedding record (class {}, image {}) has {} values, cache dim is {}",
                                   rec.class_id, rec.image_index, rec.values.size(), cache.dim));
    }
  }
  Writer w;
  w.bytes(kCacheMagic, sizeof kCacheMagic);
  w.scalar<std::uint32_t>(cache.dim);
  w.scalar<std::uint64_t>(cache.records.size());
  w.scalar<std::uint64_t>(cache.fingerprint);
  for (const auto& rec : cache.records) {
    w.scalar<std::int32_t>(rec.class_id);
    w.scalar<std::int32_t>(rec.image_index);
    w.floats(rec.values);
  }
  w.flush(path);
}

namespace {

struct CacheHeader {
  std::uint32_t dim;
  std::uint64_t count;
  std::uint64_t fingerprint;
};

CacheHeader read_cache_header(Reader& r) {
  r.expect_magic(kCacheMagic, "embedding cache");
  CacheHeader h{};
  h.dim = r.scalar<std::uint32_t>("dim");
  h.count = r.scalar<std::uint64_t>("record count");
  h.fingerprint = r.scalar<std::uint64_t>("fingerprint");
  return h;
}

}  // namespace

EmbeddingCache read_embedding_cache(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> expected_fingerprint) {
  Reader r(path);
  const CacheHeader h = read_cache_header(r);
  if (expected_fingerprint && *expected_fingerprint != h.fingerprint) {
    throw StaleCacheError(fmt::format("{}: cache fingerprint {:016x} does not match the current encoder ({:016x}); "
                                      "re-export the embeddings",
                                      r.path(), h.fingerprint, *expected_fingerprint));
  }
  const std::size_t record_bytes = 8 + std::size_t{h.dim} * sizeof(float);
  if (h.count > r.remaining() / record_bytes) {
    throw TruncatedPayloadError(fmt::format("{}: header promises {} records, file holds {} bytes", r.path(),
                                            h.count, r.remaining()));
  }
  EmbeddingCache cache;
  cache.dim = h.dim;
  cache.fingerprint = h.fingerprint;
  cache.records.resize(h.count);
  for (auto& rec : cache.records) {
    rec.class_id = r.scalar<std::int32_t>("class id");
    rec.image_index = r.scalar<std::int32_t>("image index");
    rec.values.resize(h.dim);
    r.floats(rec.values, "embedding");
  }
  r.expect_end();
  return cache;
}

std::uint64_t read_cache_fingerprint(const std::filesystem::path& path) {
  Reader r(path);
  return read_cache_header(r).fingerprint;
}

}  // namespace fsl
