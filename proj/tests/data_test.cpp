#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fsl/archive.hpp"
#include "fsl/dataset.hpp"
#include "fsl/episodes.hpp"
#include "fsl/errors.hpp"
#include "fsl/glyphs.hpp"
#include "fsl/image.hpp"
#include "support/gradcheck.hpp"
#include "support/image_tree.hpp"
#include "support/temp_dir.hpp"

using namespace fsl;
namespace fs = std::filesystem;
using testkit::random_tensor;
using testkit::TempDir;

namespace {

std::vector<std::uint8_t> encode_png(const cv::Mat& m) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", m, buf);
  return buf;
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

WeightArchive sample_archive() {
  WeightArchive a;
  a.add("alpha", random_tensor({3, 4}, 1));
  a.add("beta.weight", random_tensor({2, 3, 3, 3}, 2));
  a.add("gamma", random_tensor({7}, 3, -1e3, 1e3));
  a.normalization = {{0.5f, 0.25f, 0.125f}, {2.0f, 3.0f, 4.0f}};
  a.metadata = {{"note", "test"}, {"epoch", 3}};
  return a;
}

// Manifest length lives at bytes [12, 16).
std::size_t payload_offset(const std::vector<char>& bytes) {
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + 12, 4);
  return 16 + len;
}

}  // namespace

TEST(Preprocess, ExactScalingAtTargetSize) {
  cv::Mat img(4, 4, CV_8UC3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at<cv::Vec3b>(y, x) = cv::Vec3b(uchar(10 * x), uchar(50 + y), uchar(200 - x - y));
  const auto png = encode_png(img);
  Tensor t = preprocess_bytes(png, 4, "mem");
  ASSERT_EQ(t.shape(), (Shape{3, 4, 4}));
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const cv::Vec3b px = img.at<cv::Vec3b>(y, x);  // BGR
      EXPECT_EQ(t.at((0 * 4 + y) * 4 + x), float(px[2]) / 255.0f);
      EXPECT_EQ(t.at((1 * 4 + y) * 4 + x), float(px[1]) / 255.0f);
      EXPECT_EQ(t.at((2 * 4 + y) * 4 + x), float(px[0]) / 255.0f);
    }
  }
}

TEST(Preprocess, GrayIsReplicatedAndScaled) {
  const auto png = encode_png(cv::Mat(9, 7, CV_8UC1, cv::Scalar(128)));
  Tensor t = preprocess_bytes(png, 5, "gray");
  ASSERT_EQ(t.shape(), (Shape{3, 5, 5}));
  for (float v : t.data()) EXPECT_NEAR(v, 0.50196, 1e-5);
}

TEST(Preprocess, BilinearCheckerboardMatchesDirectFormula) {
  Tensor board({1, 2, 2}, std::vector<float>{0, 1, 1, 0});
  Tensor up = resize_bilinear(board, 4, 4);
  // Oracle: half-pixel source coordinate, clamped to the image, then the
  // textbook four-neighbour interpolation.
  auto src = [](int i) { return std::clamp((i + 0.5) * 2.0 / 4.0 - 0.5, 0.0, 1.0); };
  const double v[2][2] = {{0, 1}, {1, 0}};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double sy = src(y), sx = src(x);
      const double want = v[0][0] * (1 - sy) * (1 - sx) + v[0][1] * (1 - sy) * sx + v[1][0] * sy * (1 - sx) +
                          v[1][1] * sy * sx;
      EXPECT_NEAR(up.at(y * 4 + x), want, 1e-6) << y << "," << x;
    }
  }
  EXPECT_EQ(up.at(0), 0.0f);
  EXPECT_EQ(up.at(3), 1.0f);
  EXPECT_EQ(up.at(12), 1.0f);
  EXPECT_EQ(up.at(15), 0.0f);
}

TEST(Preprocess, IdempotentOnConformingInput) {
  Tensor x = random_tensor({3, 6, 6}, 4, 0, 1);
  Tensor y = resize_bilinear(x, 6, 6);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.at(i), y.at(i));
}

TEST(Preprocess, UndecodableNamesTheSource) {
  TempDir dir;
  const fs::path bad = dir.path() / "broken.png";
  write_all(bad, {'n', 'o', 'p', 'e'});
  try {
    preprocess_file(bad, 8);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
  EXPECT_THROW(preprocess_file(dir.path() / "missing.png", 8), DecodeError);
}

TEST(WeightArchive, RoundTripIsBitExact) {
  TempDir dir;
  const fs::path p = dir.path() / "a.fslw";
  const WeightArchive a = sample_archive();
  save_weight_archive(p, a);
  EXPECT_EQ(fs::file_size(p), payload_offset(read_all(p)) + a.payload_bytes());
  const WeightArchive b = load_weight_archive(p);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(b.tensors[i].name, a.tensors[i].name);
    EXPECT_EQ(b.tensors[i].tensor.shape(), a.tensors[i].tensor.shape());
    EXPECT_EQ(0, std::memcmp(b.tensors[i].tensor.data().data(), a.tensors[i].tensor.data().data(),
                             a.tensors[i].tensor.numel() * sizeof(float)));
  }
  EXPECT_EQ(b.normalization.mean, a.normalization.mean);
  EXPECT_EQ(b.normalization.std, a.normalization.std);
  EXPECT_EQ(b.metadata, a.metadata);
}

TEST(WeightArchive, FlippedPayloadByteNamesTheTensor) {
  TempDir dir;
  const fs::path p = dir.path() / "a.fslw";
  save_weight_archive(p, sample_archive());
  auto bytes = read_all(p);
  // Second tensor starts after the 12 floats of "alpha".
  bytes[payload_offset(bytes) + 12 * 4 + 5] ^= 0x10;
  write_all(p, bytes);
  try {
    load_weight_archive(p);
    FAIL() << "expected ChecksumError";
  } catch (const ChecksumError& e) {
    EXPECT_EQ(e.tensor_name(), "beta.weight");
  }
}

TEST(WeightArchive, DistinctErrorsForVersionTruncationAndGarbage) {
  TempDir dir;
  const fs::path p = dir.path() / "a.fslw";
  save_weight_archive(p, sample_archive());
  const auto good = read_all(p);

  auto version = good;
  version[8] = 2;
  write_all(p, version);
  EXPECT_THROW(load_weight_archive(p), VersionMismatchError);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  write_all(p, truncated);
  EXPECT_THROW(load_weight_archive(p), TruncatedPayloadError);

  auto extra = good;
  extra.push_back('x');
  write_all(p, extra);
  try {
    load_weight_archive(p);
    FAIL();
  } catch (const TruncatedPayloadError&) {
    FAIL() << "trailing bytes are not truncation";
  } catch (const ChecksumError&) {
    FAIL() << "trailing bytes are not a checksum failure";
  } catch (const FormatError&) {
  }

  auto magic = good;
  magic[0] = 'X';
  write_all(p, magic);
  EXPECT_THROW(load_weight_archive(p), FormatError);

  auto short_manifest = good;
  short_manifest.resize(20);
  write_all(p, short_manifest);
  EXPECT_THROW(load_weight_archive(p), TruncatedPayloadError);
}

TEST(WeightArchive, LookupAndDuplicates) {
  WeightArchive a = sample_archive();
  EXPECT_TRUE(a.contains("alpha"));
  EXPECT_THROW(a.get("nope"), FormatError);
  EXPECT_THROW(a.add("alpha", Tensor({1})), FormatError);
}

TEST(EmbeddingCache, RoundTripHundredRecords) {
  TempDir dir;
  Rng rng(5);
  EmbeddingCache c{16, 0xfeedbeefcafe1234ULL, {}};
  for (int i = 0; i < 100; ++i) {
    EmbeddingRecord r{i % 7, i, std::vector<float>(16)};
    for (auto& v : r.values) v = float(rng.normal());
    c.records.push_back(r);
  }
  const fs::path p = dir.path() / "c.fslemb";
  write_embedding_cache(p, c);
  EXPECT_EQ(fs::file_size(p), 28u + 100u * (8u + 16u * 4u));
  const EmbeddingCache d = read_embedding_cache(p, c.fingerprint);
  EXPECT_EQ(d.dim, 16u);
  ASSERT_EQ(d.records.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(d.records[i].class_id, c.records[i].class_id);
    EXPECT_EQ(d.records[i].image_index, c.records[i].image_index);
    EXPECT_EQ(0, std::memcmp(d.records[i].values.data(), c.records[i].values.data(), 64));
  }
  EXPECT_EQ(read_cache_fingerprint(p), c.fingerprint);
}

TEST(EmbeddingCache, EmptyCacheIsValid) {
  TempDir dir;
  const fs::path p = dir.path() / "empty.fslemb";
  write_embedding_cache(p, EmbeddingCache{32, 7, {}});
  const auto c = read_embedding_cache(p);
  EXPECT_EQ(c.records.size(), 0u);
  EXPECT_EQ(c.dim, 32u);
}

TEST(EmbeddingCache, StaleFingerprintAndCorruption) {
  TempDir dir;
  const fs::path p = dir.path() / "c.fslemb";
  EmbeddingCache c{2, 111, {{0, 0, {1, 2}}, {1, 0, {3, 4}}}};
  write_embedding_cache(p, c);
  EXPECT_THROW(read_embedding_cache(p, 222), StaleCacheError);
  EXPECT_NO_THROW(read_embedding_cache(p, 111));

  auto bytes = read_all(p);
  bytes.resize(bytes.size() - 4);
  write_all(p, bytes);
  EXPECT_THROW(read_embedding_cache(p), TruncatedPayloadError);

  c.records[1].values.push_back(5);
  EXPECT_THROW(write_embedding_cache(p, c), ShapeError);
}

TEST(Fingerprint, SensitiveToValuesNamesAndSalt) {
  std::vector<NamedTensor> a = {{"w", Tensor::vector({1, 2})}};
  std::vector<NamedTensor> b = {{"w", Tensor::vector({1, 2.0000002f})}};
  std::vector<NamedTensor> c = {{"v", Tensor::vector({1, 2})}};
  EXPECT_EQ(fingerprint_tensors(a), fingerprint_tensors(a));
  EXPECT_NE(fingerprint_tensors(a), fingerprint_tensors(b));
  EXPECT_NE(fingerprint_tensors(a), fingerprint_tensors(c));
  EXPECT_NE(fingerprint_tensors(a, 32), fingerprint_tensors(a, 84));
}

// ---- dataset scanning and glyphs ---------------------------------------------

TEST(Dataset, SortedClassesAndImageFilesOnly) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), {"b", "a", "c10", "c9"}, 3);
  std::ofstream(tmp.path() / "a" / "notes.txt") << "skip me";
  std::ofstream(tmp.path() / "stray.png") << "top-level files are not classes";
  auto ds = ImageFolderDataset::scan(tmp.path());
  ASSERT_EQ(ds.classes.size(), 4u);
  EXPECT_EQ(ds.classes[0].name, "a");
  EXPECT_EQ(ds.classes[2].name, "c10");
  EXPECT_EQ(ds.classes[0].files.size(), 3u);
  EXPECT_EQ(ds.image_count(), 12u);
  EXPECT_TRUE(std::is_sorted(ds.classes[1].files.begin(), ds.classes[1].files.end()));
  EXPECT_NE(ds.find("c9"), nullptr);
  EXPECT_EQ(ds.find("d"), nullptr);
  EXPECT_TRUE(is_image_file("x/Y.JPG"));
  EXPECT_FALSE(is_image_file("x/y.txt"));
}

TEST(Dataset, EmptyClassFolderNamed) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), {"a"}, 1);
  std::filesystem::create_directories(tmp.path() / "hollow");
  try {
    ImageFolderDataset::scan(tmp.path());
    FAIL() << "expected LayoutError";
  } catch (const LayoutError& e) {
    EXPECT_NE(std::string(e.what()).find("'hollow'"), std::string::npos);
  }
  EXPECT_THROW(ImageFolderDataset::scan(tmp.path() / "nope"), LayoutError);
}

TEST(Dataset, ImageStoreBatchesAndCaches) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), {"a"}, 2, 8);
  auto ds = ImageFolderDataset::scan(tmp.path());
  ImageStore store(16);
  Tensor b = store.batch({ds.classes[0].files[1], ds.classes[0].files[0], ds.classes[0].files[1]});
  EXPECT_EQ(b.shape(), (Shape{3, 3, 16, 16}));
  EXPECT_EQ(store.cached(), 2u);
  EXPECT_EQ(b.at(0), store.get(ds.classes[0].files[1]).at(0));
  EXPECT_EQ(b.at(2 * 3 * 256), b.at(0));
}

TEST(Glyphs, DeterministicAndClassSpecific) {
  const auto t = glyph_template(5, 3);
  EXPECT_GE(t.strokes.size(), 3u);
  EXPECT_EQ(render_glyph(t, 5, 3, 7, 32), render_glyph(glyph_template(5, 3), 5, 3, 7, 32));
  EXPECT_NE(render_glyph(t, 5, 3, 7, 32), render_glyph(t, 5, 3, 8, 32));

  // Instances of one class sit closer to each other than to another class.
  auto dist = [](const std::vector<float>& a, const std::vector<float>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
  };
  const auto u = glyph_template(5, 4);
  double within = 0, across = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    within += dist(render_glyph(t, 5, 3, i, 32), render_glyph(t, 5, 3, i + 10, 32));
    across += dist(render_glyph(t, 5, 3, i, 32), render_glyph(u, 5, 4, i, 32));
  }
  EXPECT_LT(within, across);
  for (float v : render_glyph(t, 5, 3, 0, 32)) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Glyphs, DatasetLayoutAndProtocol) {
  testkit::TempDir tmp;
  GlyphConfig cfg{6, 4, 16, 4, 1};
  const auto names = write_glyph_dataset(tmp.path(), cfg);
  EXPECT_EQ(names.front(), "g00");
  auto ds = ImageFolderDataset::scan(tmp.path());
  EXPECT_EQ(ds.classes.size(), 6u);
  EXPECT_EQ(ds.image_count(), 24u);
  const auto m = ProtocolManifest::load(tmp.path() / "protocols.json");
  auto split = build_protocol_split(Protocol::custom, tmp.path(), &m);
  EXPECT_EQ(split.train.size(), 4u);
  EXPECT_EQ(split.test.size(), 2u);
  EXPECT_EQ(split.test.classes[1].name, "g05");
  Tensor img = preprocess_file(split.train.classes[0].files[0], 16);
  EXPECT_EQ(img.at(0), img.at(256));  // gray replicated
  EXPECT_THROW(write_glyph_dataset(tmp.path() / "bad", GlyphConfig{3, 1, 16, 3, 0}), ContractError);
}
