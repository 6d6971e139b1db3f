#include "fsl/episodes.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fsl/dataset.hpp"
#include "fsl/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace fsl {

void EpisodeSpec::validate() const {
  if (n_way == 0) throw ContractError("n_way must be positive");
  if (k_shot != 1 && k_shot != 5 && k_shot != 10) {
    throw ContractError(fmt::format("k_shot must be 1, 5 or 10, got {}", k_shot));
  }
  if (q_queries == 0) throw ContractError("q_queries must be positive");
}

SplitSide SplitSide::from_counts(const std::vector<std::string>& names, const std::vector<std::size_t>& counts) {
  if (names.size() != counts.size()) throw ContractError("one count per class name");
  SplitSide side;
  for (std::size_t i = 0; i < names.size(); ++i) side.classes.push_back({names[i], {}, {}, counts[i]});
  return side;
}

std::size_t SplitSide::image_count() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.count;
  return n;
}

const fs::path& SplitSide::file(std::size_t class_index, std::size_t image_index) const {
  if (class_index >= classes.size() || image_index >= classes[class_index].files.size()) {
    throw IndexError(fmt::format("no image {} in class {}", image_index, class_index));
  }
  return classes[class_index].files[image_index];
}

void check_side(const SplitSide& side, const EpisodeSpec& spec) {
  spec.validate();
  if (side.size() < spec.n_way) {
    throw SamplingError(fmt::format("{}-way episodes need {} classes, the split side has {}", spec.n_way,
                                    spec.n_way, side.size()));
  }
  for (const auto& c : side.classes) {
    if (c.count < spec.per_class()) {
      throw SamplingError(fmt::format("class '{}' holds {} images, episodes need {} ({} support + {} query)",
                                      c.name, c.count, spec.per_class(), spec.k_shot, spec.q_queries));
    }
  }
}

namespace {

// First m entries of a partial Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
  pool.resize(m);
  return pool;
}

}  // namespace

Episode sample_episode(const SplitSide& side, const EpisodeSpec& spec, Rng& rng) {
  check_side(side, spec);
  Episode ep;
  ep.class_ids = draw_without_replacement(side.size(), spec.n_way, rng);
  ep.support.reserve(spec.n_way * spec.k_shot);
  ep.query.reserve(spec.n_way * spec.q_queries);
  std::vector<std::vector<std::size_t>> picks;
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    const std::size_t c = ep.class_ids[label];
    picks.push_back(draw_without_replacement(side.classes[c].count, spec.per_class(), rng));
  }
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    const std::size_t c = ep.class_ids[label];
    for (std::size_t j = 0; j < spec.k_shot; ++j) {
      ep.support.push_back({c, picks[label][j]});
      ep.support_labels.push_back(label);
    }
  }
  for (std::size_t label = 0; label < spec.n_way; ++label) {
    const std::size_t c = ep.class_ids[label];
    for (std::size_t j = spec.k_shot; j < spec.per_class(); ++j) {
      ep.query.push_back({c, picks[label][j]});
      ep.query_labels.push_back(label);
    }
  }
  return ep;
}

Episode sample_episode(const SplitSide& side, const EpisodeSpec& spec, std::uint64_t index) {
  Rng rng = Rng::stream(spec.seed, index);
  return sample_episode(side, spec, rng);
}

// ---- protocols -------------------------------------------------------------

std::string_view protocol_name(Protocol p) {
  switch (p) {
    case Protocol::mono_intra: return "mono_intra";
    case Protocol::mono_inter: return "mono_inter";
    case Protocol::cross_lingual: return "cross_lingual";
    case Protocol::split_digit: return "split_digit";
    case Protocol::custom: return "custom";
  }
  return "?";
}

Protocol parse_protocol(std::string_view name) {
  for (auto p : {Protocol::mono_intra, Protocol::mono_inter, Protocol::cross_lingual, Protocol::split_digit,
                 Protocol::custom}) {
    if (protocol_name(p) == name) return p;
  }
  throw ContractError(fmt::format(
      "unknown protocol '{}' (expected mono_intra, mono_inter, cross_lingual, split_digit or custom)", name));
}

ProtocolManifest ProtocolManifest::parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw LayoutError(fmt::format("protocol manifest is not valid JSON: {}", e.what()));
  }
  if (!doc.contains("protocols") || !doc["protocols"].is_object()) {
    throw LayoutError("protocol manifest needs a 'protocols' object");
  }
  ProtocolManifest m;
  for (const auto& [name, node] : doc["protocols"].items()) {
    try {
      ProtocolEntry e;
      e.train_root = node.value("train_root", std::string("."));
      e.test_root = node.value("test_root", e.train_root.string());
      if (node.contains("val_root")) e.val_root = node["val_root"].get<std::string>();
      e.train_classes = node.value("train_classes", std::vector<std::string>{});
      e.test_classes = node.value("test_classes", std::vector<std::string>{});
      e.val_classes = node.value("val_classes", std::vector<std::string>{});
      m.entries.emplace(name, std::move(e));
    } catch (const json::exception& ex) {
      throw LayoutError(fmt::format("protocol manifest entry '{}': {}", name, ex.what()));
    }
  }
  return m;
}

ProtocolManifest ProtocolManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LayoutError(fmt::format("cannot read protocol manifest {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ProtocolManifest::save(const fs::path& path) const {
  json protocols = json::object();
  for (const auto& [name, e] : entries) {
    json node{{"train_root", e.train_root.string()},
              {"test_root", e.test_root.string()},
              {"train_classes", e.train_classes},
              {"test_classes", e.test_classes}};
    if (e.val_root) {
      node["val_root"] = e.val_root->string();
      node["val_classes"] = e.val_classes;
    }
    protocols[name] = std::move(node);
  }
  std::ofstream out(path);
  if (!out) throw LayoutError(fmt::format("cannot write protocol manifest {}", path.string()));
  out << json{{"protocols", protocols}}.dump(2) << "\n";
}

ProtocolEntry default_protocol_entry(Protocol p) {
  if (p != Protocol::split_digit) {
    throw LayoutError(fmt::format("protocol {} needs an entry in the protocol manifest", protocol_name(p)));
  }
  return ProtocolEntry{".", ".", std::nullopt, {"0", "1", "2", "3", "4", "5"}, {"6", "7", "8", "9"}, {}};
}

namespace {

// Train/test class counts of the reference layouts. Only used for a warning.
std::optional<std::pair<std::size_t, std::size_t>> reference_counts(Protocol p) {
  switch (p) {
    case Protocol::mono_intra: return std::pair<std::size_t, std::size_t>{39, 11};
    case Protocol::mono_inter: return std::pair<std::size_t, std::size_t>{49, 11};
    case Protocol::cross_lingual: return std::pair<std::size_t, std::size_t>{46, 11};
    case Protocol::split_digit: return std::pair<std::size_t, std::size_t>{6, 4};
    case Protocol::custom: return std::nullopt;
  }
  return std::nullopt;
}

fs::path resolve(const fs::path& data_root, const fs::path& p) { return p.is_absolute() ? p : data_root / p; }

SplitSide make_side(const ImageFolderDataset& ds, const std::vector<std::string>& names,
                    std::vector<std::string>& missing) {
  SplitSide side;
  for (const auto& name : names) {
    const ClassFolder* c = ds.find(name);
    if (!c) {
      missing.push_back(fmt::format("{}/{}", ds.root.string(), name));
      continue;
    }
    side.classes.push_back({c->name, c->dir, c->files, c->files.size()});
  }
  return side;
}

std::vector<std::string> unclaimed(const ImageFolderDataset& ds, const std::vector<std::string>& claimed) {
  const std::set<std::string> taken(claimed.begin(), claimed.end());
  std::vector<std::string> out;
  for (const auto& c : ds.classes) {
    if (!taken.count(c.name)) out.push_back(c.name);
  }
  return out;
}

}  // namespace

ProtocolSplit build_protocol_split(Protocol p, const fs::path& data_root, const ProtocolManifest* manifest) {
  ProtocolEntry entry;
  const auto name = std::string(protocol_name(p));
  if (manifest && manifest->entries.count(name)) {
    entry = manifest->entries.at(name);
  } else {
    entry = default_protocol_entry(p);
  }
  const fs::path train_root = resolve(data_root, entry.train_root);
  const fs::path test_root = resolve(data_root, entry.test_root);
  const auto train_ds = ImageFolderDataset::scan(train_root);
  const auto test_ds = fs::equivalent(train_root, test_root) ? train_ds : ImageFolderDataset::scan(test_root);
  const bool shared = fs::equivalent(train_root, test_root);

  if (entry.train_classes.empty() && entry.test_classes.empty() && shared) {
    throw LayoutError(fmt::format("protocol {}: train and test share {} so at least one class list is needed", name,
                                  train_root.string()));
  }
  if (entry.train_classes.empty()) entry.train_classes = unclaimed(train_ds, shared ? entry.test_classes : std::vector<std::string>{});
  if (entry.test_classes.empty()) entry.test_classes = unclaimed(test_ds, shared ? entry.train_classes : std::vector<std::string>{});

  std::vector<std::string> missing;
  ProtocolSplit split;
  split.protocol = p;
  split.train = make_side(train_ds, entry.train_classes, missing);
  split.test = make_side(test_ds, entry.test_classes, missing);
  if (entry.val_root || !entry.val_classes.empty()) {
    const fs::path val_root = resolve(data_root, entry.val_root.value_or(entry.test_root));
    split.val = make_side(ImageFolderDataset::scan(val_root), entry.val_classes, missing);
  }
  if (!missing.empty()) {
    throw LayoutError(fmt::format("protocol {}: missing class folders: {}", name, fmt::join(missing, ", ")));
  }

  // Overlap is judged by folder identity, so equal names under different
  // roots (Devanagari "1" vs Bengali "1") are fine.
  std::set<fs::path> train_dirs;
  for (const auto& c : split.train.classes) train_dirs.insert(fs::weakly_canonical(c.dir));
  auto check_disjoint = [&](const SplitSide& side, std::string_view what) {
    for (const auto& c : side.classes) {
      if (train_dirs.count(fs::weakly_canonical(c.dir))) {
        throw ContractError(fmt::format("protocol {}: class '{}' is on both the train and {} side", name, c.name, what));
      }
    }
  };
  check_disjoint(split.test, "test");
  if (split.val) check_disjoint(*split.val, "validation");

  if (const auto ref = reference_counts(p); ref && (ref->first != split.train.size() || ref->second != split.test.size())) {
    spdlog::warn("protocol {}: {} train / {} test classes, the reference layout has {} / {}", name,
                 split.train.size(), split.test.size(), ref->first, ref->second);
  }
  return split;
}

}  // namespace fsl
