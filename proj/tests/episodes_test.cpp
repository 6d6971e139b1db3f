#include <algorithm>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fsl/episodes.hpp"
#include "fsl/errors.hpp"
#include "support/image_tree.hpp"
#include "support/temp_dir.hpp"

using namespace fsl;
using testkit::make_image_tree;
using testkit::numbered;
using testkit::TempDir;

namespace {

SplitSide uniform_side(std::size_t classes, std::size_t per_class) {
  return SplitSide::from_counts(numbered("c", classes), std::vector<std::size_t>(classes, per_class));
}

void expect_well_formed(const Episode& ep, const EpisodeSpec& spec, const SplitSide& side) {
  ASSERT_EQ(ep.class_ids.size(), spec.n_way);
  ASSERT_EQ(ep.support.size(), spec.n_way * spec.k_shot);
  ASSERT_EQ(ep.query.size(), spec.n_way * spec.q_queries);
  ASSERT_EQ(ep.support_labels.size(), ep.support.size());
  ASSERT_EQ(ep.query_labels.size(), ep.query.size());
  EXPECT_EQ(std::set<std::size_t>(ep.class_ids.begin(), ep.class_ids.end()).size(), spec.n_way);

  std::set<ImageRef> support(ep.support.begin(), ep.support.end());
  EXPECT_EQ(support.size(), ep.support.size());
  std::set<ImageRef> query(ep.query.begin(), ep.query.end());
  EXPECT_EQ(query.size(), ep.query.size());
  for (const auto& r : ep.query) EXPECT_FALSE(support.count(r));

  // labels index class_ids and agree with the image's class
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    EXPECT_EQ(ep.support_labels[i], i / spec.k_shot);
    EXPECT_EQ(ep.class_ids[ep.support_labels[i]], ep.support[i].class_index);
    EXPECT_LT(ep.support[i].image_index, side.classes[ep.support[i].class_index].count);
  }
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    EXPECT_EQ(ep.query_labels[i], i / spec.q_queries);
    EXPECT_EQ(ep.class_ids[ep.query_labels[i]], ep.query[i].class_index);
  }
}

}  // namespace

TEST(EpisodeSpec, Validation) {
  EXPECT_NO_THROW((EpisodeSpec{5, 1, 10, 0}.validate()));
  EXPECT_NO_THROW((EpisodeSpec{3, 10, 1, 0}.validate()));
  EXPECT_THROW((EpisodeSpec{5, 3, 10, 0}.validate()), ContractError);
  EXPECT_THROW((EpisodeSpec{0, 5, 10, 0}.validate()), ContractError);
  EXPECT_THROW((EpisodeSpec{5, 5, 0, 0}.validate()), ContractError);
}

TEST(Sampler, FullRosterWhenWayEqualsClasses) {
  const SplitSide side = uniform_side(6, 20);
  const EpisodeSpec spec{6, 5, 10, 3};
  for (std::uint64_t i = 0; i < 20; ++i) {
    Episode ep = sample_episode(side, spec, i);
    std::vector<std::size_t> ids = ep.class_ids;
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  }
}

TEST(Sampler, DeterministicPerSeedAndIndex) {
  const SplitSide side = uniform_side(20, 30);
  const EpisodeSpec spec{5, 5, 10, 42};
  for (std::uint64_t i = 0; i < 10; ++i) {
    Episode a = sample_episode(side, spec, i), b = sample_episode(side, spec, i);
    EXPECT_EQ(a.class_ids, b.class_ids);
    EXPECT_EQ(a.support, b.support);
    EXPECT_EQ(a.query, b.query);
  }
  EXPECT_NE(sample_episode(side, spec, 0).support, sample_episode(side, spec, 1).support);
  EpisodeSpec other = spec;
  other.seed = 43;
  EXPECT_NE(sample_episode(side, spec, 0).support, sample_episode(side, other, 0).support);
}

TEST(Sampler, WellFormedOverAThousandEpisodes) {
  const SplitSide side = SplitSide::from_counts(numbered("c", 9), {15, 15, 40, 16, 15, 100, 15, 22, 15});
  for (std::size_t k : {1, 5}) {
    const EpisodeSpec spec{5, k, 10, 7};
    for (std::uint64_t i = 0; i < 1000; ++i) expect_well_formed(sample_episode(side, spec, i), spec, side);
  }
}

TEST(Sampler, ClassFrequencyIsUniform) {
  const SplitSide side = uniform_side(20, 15);
  const EpisodeSpec spec{5, 1, 10, 11};
  std::vector<std::size_t> hits(20);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    for (auto c : sample_episode(side, spec, i).class_ids) ++hits[c];
  }
  for (std::size_t c = 0; c < 20; ++c) {
    EXPECT_GE(hits[c], 2375u) << "class " << c;
    EXPECT_LE(hits[c], 2625u) << "class " << c;
  }
}

TEST(Sampler, ImagesWithinAClassAreUniform) {
  const SplitSide side = uniform_side(5, 30);
  const EpisodeSpec spec{5, 5, 10, 12};
  std::vector<std::size_t> hits(30);
  for (std::uint64_t i = 0; i < 3000; ++i) {
    const Episode ep = sample_episode(side, spec, i);
    for (const auto& r : ep.support) {
      if (r.class_index == 0) ++hits[r.image_index];
    }
  }
  // 3000 episodes * 5 support slots / 30 images = 500 each
  for (auto h : hits) {
    EXPECT_GT(h, 400u);
    EXPECT_LT(h, 600u);
  }
}

TEST(Sampler, ErrorsNameTheDeficientClass) {
  const SplitSide few = uniform_side(3, 30);
  EXPECT_THROW(sample_episode(few, EpisodeSpec{5, 1, 10, 0}, 0), SamplingError);
  const SplitSide thin = SplitSide::from_counts({"ka", "kha", "ga", "gha", "nga"}, {20, 20, 14, 20, 20});
  try {
    sample_episode(thin, EpisodeSpec{5, 5, 10, 0}, 0);
    FAIL() << "expected SamplingError";
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("'ga'"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(sample_episode(thin, EpisodeSpec{5, 1, 10, 0}, 0));
}

TEST(Protocols, NamesRoundTrip) {
  for (auto p : {Protocol::mono_intra, Protocol::mono_inter, Protocol::cross_lingual, Protocol::split_digit,
                 Protocol::custom}) {
    EXPECT_EQ(parse_protocol(protocol_name(p)), p);
  }
  EXPECT_THROW(parse_protocol("intra"), ContractError);
}

TEST(Protocols, SplitDigitFromPlainLayout) {
  TempDir tmp;
  make_image_tree(tmp.path(), {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"}, 2);
  ProtocolSplit split = build_protocol_split(Protocol::split_digit, tmp.path());
  ASSERT_EQ(split.train.size(), 6u);
  ASSERT_EQ(split.test.size(), 4u);
  EXPECT_EQ(split.train.classes.front().name, "0");
  EXPECT_EQ(split.test.classes.front().name, "6");
  EXPECT_EQ(split.train.classes[0].count, 2u);
  EXPECT_EQ(&split.validation(), &split.test);
  for (const auto& a : split.train.classes)
    for (const auto& b : split.test.classes) EXPECT_NE(a.name, b.name);
}

TEST(Protocols, MissingFoldersAreAllListed) {
  TempDir tmp;
  make_image_tree(tmp.path(), {"0", "1", "2", "4", "5", "6", "7", "8"}, 1);
  try {
    build_protocol_split(Protocol::split_digit, tmp.path());
    FAIL() << "expected LayoutError";
  } catch (const LayoutError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("/3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("/9"), std::string::npos) << msg;
  }
}

TEST(Protocols, MonoIntraFromManifest) {
  TempDir tmp;
  const auto consonants = numbered("con", 39), vowels = numbered("vow", 11);
  make_image_tree(tmp.path() / "cmaterdb", consonants, 1);
  make_image_tree(tmp.path() / "cmaterdb", vowels, 1);
  ProtocolManifest m;
  m.entries["mono_intra"] = ProtocolEntry{"cmaterdb", "cmaterdb", std::nullopt, consonants, vowels, {}};
  m.save(tmp.path() / "protocols.json");
  const auto loaded = ProtocolManifest::load(tmp.path() / "protocols.json");
  ProtocolSplit split = build_protocol_split(Protocol::mono_intra, tmp.path(), &loaded);
  EXPECT_EQ(split.train.size(), 39u);
  EXPECT_EQ(split.test.size(), 11u);

  // one list is enough when both sides share a root
  ProtocolManifest implicit;
  implicit.entries["mono_intra"] = ProtocolEntry{"cmaterdb", "cmaterdb", std::nullopt, {}, vowels, {}};
  ProtocolSplit again = build_protocol_split(Protocol::mono_intra, tmp.path(), &implicit);
  EXPECT_EQ(again.train.size(), 39u);
  for (std::size_t i = 0; i < 39; ++i) EXPECT_EQ(again.train.classes[i].name, split.train.classes[i].name);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_EQ(again.test.classes[i].dir, split.test.classes[i].dir);
}

TEST(Protocols, OverlapRejectedButEqualNamesAcrossRootsAllowed) {
  TempDir tmp;
  make_image_tree(tmp.path() / "a", {"x", "y", "z"}, 1);
  make_image_tree(tmp.path() / "b", {"x", "w"}, 1);
  ProtocolManifest m;
  m.entries["custom"] = ProtocolEntry{"a", "a", std::nullopt, {"x", "y"}, {"y", "z"}, {}};
  EXPECT_THROW(build_protocol_split(Protocol::custom, tmp.path(), &m), ContractError);

  m.entries["cross_lingual"] = ProtocolEntry{"a", "b", std::nullopt, {}, {}, {}};
  ProtocolSplit split = build_protocol_split(Protocol::cross_lingual, tmp.path(), &m);
  EXPECT_EQ(split.train.size(), 3u);
  EXPECT_EQ(split.test.size(), 2u);
}

TEST(Protocols, ManifestRequiredAndValidated) {
  TempDir tmp;
  make_image_tree(tmp.path(), {"a", "b"}, 1);
  EXPECT_THROW(build_protocol_split(Protocol::mono_intra, tmp.path()), LayoutError);
  EXPECT_THROW(ProtocolManifest::parse("{\"protocols\": 3}"), LayoutError);
  EXPECT_THROW(ProtocolManifest::parse("not json"), LayoutError);
  EXPECT_THROW(ProtocolManifest::load(tmp.path() / "absent.json"), LayoutError);
  ProtocolManifest both_empty;
  both_empty.entries["custom"] = ProtocolEntry{".", ".", std::nullopt, {}, {}, {}};
  EXPECT_THROW(build_protocol_split(Protocol::custom, tmp.path(), &both_empty), LayoutError);
}

TEST(Protocols, ValidationSideAndDeterminism) {
  TempDir tmp;
  make_image_tree(tmp.path(), numbered("k", 8), 3);
  const auto m = ProtocolManifest::parse(R"({"protocols": {"custom": {
      "train_classes": ["k00", "k01", "k02", "k03"], "test_classes": ["k06", "k07"],
      "val_classes": ["k04", "k05"]}}})");
  ProtocolSplit a = build_protocol_split(Protocol::custom, tmp.path(), &m);
  ASSERT_TRUE(a.val.has_value());
  EXPECT_EQ(a.validation().classes[0].name, "k04");
  ProtocolSplit b = build_protocol_split(Protocol::custom, tmp.path(), &m);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train.classes[i].files, b.train.classes[i].files);

  const auto clash = ProtocolManifest::parse(R"({"protocols": {"custom": {
      "train_classes": ["k00", "k01"], "test_classes": ["k06"], "val_classes": ["k01"]}}})");
  EXPECT_THROW(build_protocol_split(Protocol::custom, tmp.path(), &clash), ContractError);
}
