#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fsl/cli.hpp"
#include "fsl/trainer.hpp"
#include "support/fixture.hpp"
#include "support/image_tree.hpp"
#include "support/temp_dir.hpp"

using namespace fsl;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result fewshot(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// 10 glyph classes at 16 px (6 train / 4 test) and a briefly trained
// prototypical checkpoint, shared by the whole suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = std::make_unique<testkit::TempDir>();
    const Result s = fewshot({"synth", "--out", data().string(), "--classes", "10", "--per-class", "30",
                              "--image-size", "16", "--train-classes", "6", "--seed", "2"});
    ASSERT_EQ(s.code, 0) << s.err;
    const Result t = fewshot(train_args(ckpt_dir(), {"--seed", "3"}));
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() { tmp_.reset(); }

  static fs::path root() { return tmp_->path(); }
  static fs::path data() { return root() / "glyphs"; }
  static fs::path ckpt_dir() { return root() / "ckpt"; }
  static fs::path checkpoint() { return ckpt_dir() / "prototypical.fslw"; }

  static std::vector<std::string> data_args() {
    return {"--protocol", "custom", "--data-root", data().string(), "--n-way", "3"};
  }
  static std::vector<std::string> train_args(const fs::path& out, std::vector<std::string> extra) {
    std::vector<std::string> a{"train"};
    for (auto& s : data_args()) a.push_back(s);
    for (auto& s : std::vector<std::string>{"--image-size", "16", "--epochs", "1", "--train-tasks", "5",
                                            "--val-tasks", "5", "--out", out.string()})
      a.push_back(s);
    for (auto& s : extra) a.push_back(s);
    return a;
  }
  static std::vector<std::string> with(std::string cmd, std::vector<std::string> extra) {
    std::vector<std::string> a{std::move(cmd)};
    for (auto& s : data_args()) a.push_back(s);
    for (auto& s : extra) a.push_back(s);
    return a;
  }

  static std::unique_ptr<testkit::TempDir> tmp_;
};

std::unique_ptr<testkit::TempDir> Cli::tmp_;

}  // namespace

TEST(CliBasics, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(cli::UsageError("x")), cli::kExitUsage);
  EXPECT_EQ(cli::exit_code_for(LayoutError("x")), cli::kExitLayout);
  EXPECT_EQ(cli::exit_code_for(SamplingError("x")), cli::kExitLayout);
  EXPECT_EQ(cli::exit_code_for(NumericError("x")), cli::kExitNumeric);
  EXPECT_EQ(cli::exit_code_for(StaleCacheError("x")), cli::kExitFormat);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kExitFailure);
  // usage, layout and numeric failures are told apart
  EXPECT_NE(cli::kExitUsage, cli::kExitLayout);
  EXPECT_NE(cli::kExitLayout, cli::kExitNumeric);
  EXPECT_NE(cli::kExitUsage, cli::kExitNumeric);
}

TEST(CliBasics, MissingDataRootNamesTheFlag) {
  testkit::TempDir tmp;
  const Result r = fewshot({"train", "--protocol", "custom", "--data-root", (tmp.path() / "nope").string(), "--out",
                            (tmp.path() / "o").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("--data-root"), std::string::npos) << r.err;
}

TEST(CliBasics, UnknownHeadAndShotAreUsageErrors) {
  testkit::TempDir tmp;
  EXPECT_EQ(fewshot({"train", "--protocol", "custom", "--data-root", tmp.path().string(), "--out", "o", "--head",
                     "knn"})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(fewshot({"train", "--protocol", "custom", "--data-root", tmp.path().string(), "--out", "o", "--shot",
                     "3"})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(fewshot({}).code, cli::kExitUsage);
}

TEST(CliBasics, MissingProtocolManifestIsALayoutError) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), {"a", "b"}, 2);
  const Result r = fewshot({"train", "--protocol", "mono_intra", "--data-root", tmp.path().string(), "--out",
                            (tmp.path() / "o").string()});
  EXPECT_EQ(r.code, cli::kExitLayout) << r.err;
}

TEST(CliBasics, ConfigFileSuppliesOptionsAndFlagsWin) {
  testkit::TempDir tmp;
  const fs::path cfg = tmp.path() / "run.toml";
  std::ofstream(cfg) << "[synth]\nout = \"" << (tmp.path() / "g").string()
                     << "\"\nclasses = 5\nper-class = 2\nimage-size = 8\ntrain-classes = 3\n";
  ASSERT_EQ(fewshot({"--config", cfg.string(), "synth", "--classes", "4"}).code, 0);
  EXPECT_EQ(ImageFolderDataset::scan(tmp.path() / "g").classes.size(), 4u);

  fs::remove_all(tmp.path() / "g");
  ::setenv("FEWSHOT_CONFIG", cfg.string().c_str(), 1);
  const Result r = fewshot({"synth"});
  ::unsetenv("FEWSHOT_CONFIG");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(ImageFolderDataset::scan(tmp.path() / "g").classes.size(), 5u);
}

TEST_F(Cli, TrainWritesCheckpointAndReport) {
  const auto report = nlohmann::json::parse(slurp(ckpt_dir() / "prototypical.train.json"));
  EXPECT_EQ(report["best_epoch"], 1);
  EXPECT_EQ(report["val_accuracy"].size(), 1u);
  EXPECT_EQ(report["config"]["n_way"], 3);
  nlohmann::json meta;
  FewShotModel m = load_checkpoint(checkpoint(), nullptr, &meta);
  EXPECT_EQ(m.image_size(), 16u);
  EXPECT_EQ(meta["protocol"], "custom");
}

TEST_F(Cli, ZeroLearningRateLeavesParametersUnchanged) {
  const fs::path out = root() / "lr0";
  const Result r = fewshot(train_args(out, {"--lr", "0", "--seed", "11"}));
  ASSERT_EQ(r.code, 0) << r.err;
  FewShotModel trained = load_checkpoint(out / "prototypical.fslw", nullptr);
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.seed = 11;
  FewShotModel fresh = FewShotModel::create(cfg);
  const auto a = trained.parameters(), b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].tensor.data(), y = b[i].tensor.data();
    ASSERT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << a[i].name;
  }
}

TEST_F(Cli, TrainableHeadWithoutCheckpointIsAnExplicitError) {
  const Result r = fewshot(with("evaluate", {"--head", "relation", "--checkpoints", ckpt_dir().string()}));
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("relation"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos) << r.err;

  const Result s = fewshot(train_args(root() / "syn", {"--head", "synergi"}));
  EXPECT_EQ(s.code, cli::kExitUsage);
  EXPECT_NE(s.err.find("--weights"), std::string::npos) << s.err;
}

TEST_F(Cli, ExportWritesOneRecordPerImage) {
  const fs::path cache = root() / "export.fsle";
  const Result r = fewshot(with("export-embeddings", {"--checkpoint", checkpoint().string(), "--cache", cache.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  FewShotModel model = load_checkpoint(checkpoint(), nullptr);
  const EmbeddingCache c = read_embedding_cache(cache, model.encoder_fingerprint());
  EXPECT_EQ(c.records.size(), ImageFolderDataset::scan(data()).image_count());
  EXPECT_EQ(c.records.size(), 300u);
  EXPECT_EQ(c.dim, model.embedding_dim());
}

TEST_F(Cli, EvaluateFromCacheMatchesEvaluateFromImages) {
  const fs::path cache = root() / "same.fsle";
  ASSERT_EQ(fewshot(with("export-embeddings", {"--checkpoint", checkpoint().string(), "--cache", cache.string()})).code,
            0);

  // Per-query predictions, episode by episode.
  const auto manifest = ProtocolManifest::load(data() / "protocols.json");
  const ProtocolSplit split = build_protocol_split(Protocol::custom, data(), &manifest);
  FewShotModel model = load_checkpoint(checkpoint(), nullptr);
  ImageStore store(16);
  ImageEmbeddingSource images(model, store, split.test);
  const EmbeddingCache c = read_embedding_cache(cache, model.encoder_fingerprint());
  CacheEmbeddingSource cached(c, class_offset(split, split.test));
  const Predictor a = make_predictor(model, images), b = make_predictor(model, cached);
  const EpisodeSpec spec{3, 5, 10, 4};
  for (std::size_t i = 0; i < 50; ++i) {
    const Episode ep = sample_episode(split.test, spec, i);
    ASSERT_EQ(a(ep), b(ep)) << "episode " << i;
  }

  const Result from_images = fewshot(with("evaluate", {"--checkpoint", checkpoint().string(), "--tasks", "30"}));
  const Result from_cache =
      fewshot(with("evaluate", {"--checkpoint", checkpoint().string(), "--cache", cache.string(), "--tasks", "30"}));
  ASSERT_EQ(from_images.code, 0) << from_images.err;
  ASSERT_EQ(from_cache.code, 0) << from_cache.err;
  EXPECT_EQ(from_images.out, from_cache.out);
}

TEST_F(Cli, StaleCacheNeedsForce) {
  const fs::path cache = root() / "stale.fsle";
  ASSERT_EQ(fewshot(with("export-embeddings", {"--checkpoint", checkpoint().string(), "--cache", cache.string()})).code,
            0);
  const fs::path other = root() / "other";
  ASSERT_EQ(fewshot(train_args(other, {"--lr", "0", "--seed", "99"})).code, 0);
  const std::string other_ckpt = (other / "prototypical.fslw").string();

  // Reading under another encoder is rejected.
  const Result eval = fewshot(with("evaluate", {"--checkpoint", other_ckpt, "--cache", cache.string()}));
  EXPECT_EQ(eval.code, cli::kExitFormat) << eval.err;

  // Overwriting it needs --force.
  const std::string before = slurp(cache);
  const Result r = fewshot(with("export-embeddings", {"--checkpoint", other_ckpt, "--cache", cache.string()}));
  EXPECT_EQ(r.code, cli::kExitFormat);
  EXPECT_NE(r.err.find("--force"), std::string::npos) << r.err;
  EXPECT_EQ(slurp(cache), before);
  EXPECT_EQ(
      fewshot(with("export-embeddings", {"--checkpoint", other_ckpt, "--cache", cache.string(), "--force"})).code, 0);
  EXPECT_NE(slurp(cache), before);
  // Same encoder again: no force needed.
  EXPECT_EQ(fewshot(with("export-embeddings", {"--checkpoint", other_ckpt, "--cache", cache.string()})).code, 0);
}

TEST(CliExport, EmptyClassFolderIsNamed) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), {"0", "1", "2", "3", "4", "5", "6", "7", "9"}, 3, 16);
  fs::create_directories(tmp.path() / "8");
  const Result r = fewshot({"export-embeddings", "--protocol", "split_digit", "--data-root", tmp.path().string(),
                            "--weights", (testkit::fixture_dir() / "resnet18.fslw").string(), "--image-size", "32",
                            "--cache", (tmp.path() / "c.fsle").string()});
  EXPECT_EQ(r.code, cli::kExitLayout);
  EXPECT_NE(r.err.find("'8'"), std::string::npos) << r.err;
}

TEST(CliExport, ResnetFeaturesWithoutCheckpoint) {
  testkit::TempDir tmp;
  testkit::make_image_tree(tmp.path(), testkit::numbered("", 10), 2, 16);
  for (int d = 0; d < 10; ++d) fs::rename(tmp.path() / fmt::format("{:02}", d), tmp.path() / std::to_string(d));
  const fs::path cache = tmp.path() / "r.fsle";
  const Result r = fewshot({"export-embeddings", "--protocol", "split_digit", "--data-root", tmp.path().string(),
                            "--weights", (testkit::fixture_dir() / "resnet18.fslw").string(), "--image-size", "32",
                            "--cache", cache.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const EmbeddingCache c = read_embedding_cache(cache);
  EXPECT_EQ(c.dim, 512u);
  EXPECT_EQ(c.records.size(), 20u);
  // digits 0..5 train first, then 6..9
  EXPECT_EQ(c.records.back().class_id, 9);
}

namespace {

// Relation MLP that scores 1 exactly when the query's one-hot coordinate is
// set in the class feature: unit i fires on q_i, unit m+i on q_i - s_i (only
// for a mismatch), fc2 takes the difference.
void make_oracle_relation(RelationModule& r, std::size_t dim, std::size_t m) {
  auto set = [](LinearParams& p, auto&& f) {
    auto w = p.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0f);
    auto b = p.bias.mutable_data();
    std::fill(b.begin(), b.end(), 0.0f);
    f(w, b);
  };
  set(r.fc1, [&](std::span<float> w, std::span<float>) {
    for (std::size_t i = 0; i < m; ++i) {
      w[i * 2 * dim + dim + i] = 1.0f;
      w[(m + i) * 2 * dim + dim + i] = 1.0f;
      w[(m + i) * 2 * dim + i] = -1.0f;
    }
  });
  set(r.fc2, [&](std::span<float> w, std::span<float>) {
    for (std::size_t i = 0; i < m; ++i) {
      w[i] = 1.0f;
      w[m + i] = -1.0f;
    }
  });
  set(r.fc3, [&](std::span<float> w, std::span<float> b) {
    w[0] = 20.0f;
    b[0] = -10.0f;
  });
}

}  // namespace

TEST(CliBenchmark, OracleEmbeddingsScorePerfectlyOnEveryHead) {
  testkit::TempDir tmp;
  const fs::path root = tmp.path() / "data";
  const auto train_names = testkit::numbered("t", 5), test_names = testkit::numbered("q", 6);
  testkit::make_image_tree(root, train_names, 21);
  testkit::make_image_tree(root, test_names, 21);
  ProtocolManifest manifest;
  manifest.entries["custom"] = ProtocolEntry{".", ".", std::nullopt, train_names, test_names, {}};
  manifest.save(root / "protocols.json");

  ModelConfig mc;
  mc.head = HeadKind::relation;
  mc.image_size = 16;
  FewShotModel relation = FewShotModel::create(mc);
  const std::size_t dim = relation.embedding_dim();
  ASSERT_GE(dim, 11u);
  make_oracle_relation(*relation.relation(), dim, std::min<std::size_t>(dim, RelationModule::kHidden1 / 2));
  fs::create_directories(tmp.path() / "ck");
  save_checkpoint(tmp.path() / "ck" / "relation.fslw", relation, {});

  // One-hot embedding on the global class id.
  EmbeddingCache cache;
  cache.dim = std::uint32_t(dim);
  cache.fingerprint = relation.encoder_fingerprint();
  for (std::int32_t c = 0; c < 11; ++c) {
    for (std::int32_t i = 0; i < 21; ++i) {
      std::vector<float> v(dim, 0.0f);
      v[std::size_t(c)] = 1.0f;
      cache.records.push_back({c, i, std::move(v)});
    }
  }
  write_embedding_cache(tmp.path() / "oracle.fsle", cache);

  auto bench = [&](const fs::path& out) {
    return fewshot({"benchmark", "--protocol", "custom", "--data-root", root.string(), "--cache",
                    (tmp.path() / "oracle.fsle").string(), "--checkpoints", (tmp.path() / "ck").string(), "--tasks",
                    "20", "--seed", "5", "--out", out.string()});
  };
  const Result r = bench(tmp.path() / "b1");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string tsv = slurp(tmp.path() / "b1" / "benchmark.tsv");
  std::istringstream lines(tsv);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n)
    EXPECT_NE(line.find("accuracy=1.000000\tf1=1.000000"), std::string::npos) << line;
  EXPECT_EQ(n, 18u);  // 6 heads x 3 shots

  // Table: 6 head rows under 3 shot column groups.
  const std::string table = slurp(tmp.path() / "b1" / "benchmark.txt");
  EXPECT_EQ(table, r.out);
  for (auto h : kAllHeads) EXPECT_NE(table.find(std::string(head_name(h))), std::string::npos);
  for (auto s : {"1-shot", "5-shot", "10-shot"}) EXPECT_NE(table.find(s), std::string::npos);

  ASSERT_EQ(bench(tmp.path() / "b2").code, 0);
  EXPECT_EQ(slurp(tmp.path() / "b2" / "benchmark.tsv"), tsv);
}

TEST_F(Cli, BenchmarkIsByteIdenticalUnderAFixedSeed) {
  const fs::path cache = root() / "bench.fsle";
  ASSERT_EQ(fewshot(with("export-embeddings", {"--checkpoint", checkpoint().string(), "--cache", cache.string()})).code,
            0);
  auto bench = [&](const fs::path& out, const std::string& seed) {
    return fewshot(with("benchmark", {"--cache", cache.string(), "--heads", "matching,bdcspn,simpleshot,prototypical",
                                      "--tasks", "15", "--seed", seed, "--out", out.string()}));
  };
  ASSERT_EQ(bench(root() / "d1", "8").code, 0);
  ASSERT_EQ(bench(root() / "d2", "8").code, 0);
  ASSERT_EQ(bench(root() / "d3", "9").code, 0);
  const std::string a = slurp(root() / "d1" / "benchmark.tsv");
  EXPECT_EQ(a, slurp(root() / "d2" / "benchmark.tsv"));
  EXPECT_NE(a, slurp(root() / "d3" / "benchmark.tsv"));

  // From images, with the checkpoint directory.
  const Result x = fewshot(with("benchmark", {"--checkpoints", ckpt_dir().string(), "--heads", "prototypical",
                                              "--shots", "5", "--tasks", "10"}));
  const Result y = fewshot(with("benchmark", {"--checkpoints", ckpt_dir().string(), "--heads", "prototypical",
                                              "--shots", "5", "--tasks", "10"}));
  ASSERT_EQ(x.code, 0) << x.err;
  EXPECT_EQ(x.out, y.out);
}
