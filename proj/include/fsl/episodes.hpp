#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsl/rng.hpp"

namespace fsl {

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;  // 1, 5 or 10
  std::size_t q_queries = 10;
  std::uint64_t seed = 0;

  std::size_t per_class() const { return k_shot + q_queries; }
  // ContractError on a zero extent or an unsupported shot.
  void validate() const;
};

// One class of a split side. `files` may be empty for count-only sides built in
// tests; `count` is authoritative.
struct SideClass {
  std::string name;
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;
  std::size_t count = 0;
};

struct SplitSide {
  std::vector<SideClass> classes;

  static SplitSide from_counts(const std::vector<std::string>& names, const std::vector<std::size_t>& counts);
  std::size_t size() const { return classes.size(); }
  std::size_t image_count() const;
  const std::filesystem::path& file(std::size_t class_index, std::size_t image_index) const;
};

struct ImageRef {
  std::size_t class_index = 0;  // into SplitSide::classes
  std::size_t image_index = 0;
  auto operator<=>(const ImageRef&) const = default;
};

struct Episode {
  std::vector<std::size_t> class_ids;  // side class indices; label i <-> class_ids[i]
  std::vector<ImageRef> support;       // grouped by label, K per class
  std::vector<std::size_t> support_labels;
  std::vector<ImageRef> query;
  std::vector<std::size_t> query_labels;

  std::size_t n_way() const { return class_ids.size(); }
};

// SamplingError when the side has fewer than n_way classes or any class holds
// fewer than k_shot + q_queries images (the message names the class).
void check_side(const SplitSide& side, const EpisodeSpec& spec);

// Classes uniformly without replacement (their draw order defines the labels),
// then K+Q images per class without replacement, the first K to the support.
Episode sample_episode(const SplitSide& side, const EpisodeSpec& spec, Rng& rng);

// Episode `index` of a run: an independent stream of spec.seed.
Episode sample_episode(const SplitSide& side, const EpisodeSpec& spec, std::uint64_t index);

// ---- protocols -------------------------------------------------------------

enum class Protocol { mono_intra, mono_inter, cross_lingual, split_digit, custom };

std::string_view protocol_name(Protocol p);
// ContractError on an unknown name.
Protocol parse_protocol(std::string_view name);

struct ProtocolEntry {
  std::filesystem::path train_root, test_root;  // relative to the data root unless absolute
  std::optional<std::filesystem::path> val_root;
  // Empty means "every class folder of the root not claimed by the other side".
  std::vector<std::string> train_classes, test_classes, val_classes;
};

// JSON text:
//   {"protocols": {"<name>": {"train_root": "...", "test_root": "...",
//                             "train_classes": [...], "test_classes": [...],
//                             "val_root": "...", "val_classes": [...]}}}
struct ProtocolManifest {
  std::map<std::string, ProtocolEntry> entries;

  static ProtocolManifest parse(std::string_view text);
  static ProtocolManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct ProtocolSplit {
  Protocol protocol = Protocol::custom;
  SplitSide train, test;
  std::optional<SplitSide> val;

  // Validation episodes come from the dedicated side when one is configured,
  // else from the test side.
  const SplitSide& validation() const { return val ? *val : test; }
};

// Built-in entry: split_digit reads folders "0".."9" straight from the data
// root. The other protocols need a manifest entry.
ProtocolEntry default_protocol_entry(Protocol p);

// LayoutError lists every missing class folder; ContractError when the same
// folder would land on both sides.
ProtocolSplit build_protocol_split(Protocol p, const std::filesystem::path& data_root,
                                   const ProtocolManifest* manifest = nullptr);

}  // namespace fsl
