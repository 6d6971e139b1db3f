#include "fsl/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fsl/glyphs.hpp"
#include "fsl/trainer.hpp"

namespace fsl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  // data
  std::string protocol;
  std::string data_root;
  std::string manifest;
  std::size_t image_size = 84;
  std::string weights;
  std::uint64_t seed = 0;
  std::size_t n_way = 0;  // 0: 3 for split_digit, else 5
  std::size_t queries = 10;

  // model / heads
  std::string head = "prototypical";
  std::vector<std::string> heads;
  std::size_t shot = 5;
  std::vector<std::size_t> shots{1, 5, 10};
  std::size_t bdcspn_z = 8;
  float bdcspn_eps = 10.0f;
  bool no_shift = false;
  std::string simpleshot_transform = "cl2n";

  // training
  std::size_t epochs = 30;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones{20, 25};
  std::size_t train_tasks = 500;
  std::size_t val_tasks = 100;
  std::uint64_t val_seed = 1;

  // evaluation / artifacts
  std::size_t tasks = 100;
  std::string checkpoint;
  std::string checkpoints;
  std::string cache;
  std::string out;
  bool force = false;

  // synth
  GlyphConfig glyphs;
};

std::vector<std::string> protocol_names() {
  std::vector<std::string> names;
  for (auto p : {Protocol::mono_intra, Protocol::mono_inter, Protocol::cross_lingual, Protocol::split_digit,
                 Protocol::custom})
    names.emplace_back(protocol_name(p));
  return names;
}

std::vector<std::string> head_names() {
  std::vector<std::string> names;
  for (auto h : kAllHeads) names.emplace_back(head_name(h));
  return names;
}

// ---- flag groups ------------------------------------------------------------

void add_data_flags(CLI::App* c, Options& o) {
  c->add_option("--protocol", o.protocol, "evaluation protocol")->required()->check(CLI::IsMember(protocol_names()));
  c->add_option("--data-root", o.data_root, "root of the class-per-folder image tree")
      ->required()
      ->check(CLI::ExistingDirectory);
  c->add_option("--manifest", o.manifest, "protocol manifest (default: <data-root>/protocols.json)")
      ->check(CLI::ExistingFile);
  c->add_option("--weights", o.weights, "ResNet18 weight archive (synergi)")->check(CLI::ExistingFile);
  c->add_option("--seed", o.seed, "episode seed");
  c->add_option("--n-way", o.n_way, "classes per episode (default 3 for split_digit, else 5)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
  c->add_option("--queries", o.queries, "query images per class")->check(CLI::PositiveNumber);
}

void add_head_flags(CLI::App* c, Options& o) {
  c->add_option("--bdcspn-z", o.bdcspn_z, "BD-CSPN pseudo-labels per class");
  c->add_option("--bdcspn-eps", o.bdcspn_eps, "BD-CSPN softmax temperature")->check(CLI::PositiveNumber);
  c->add_flag("--no-shift", o.no_shift, "disable the BD-CSPN bias shift");
  c->add_option("--simpleshot-transform", o.simpleshot_transform, "SimpleShot feature transform")
      ->check(CLI::IsMember({"un", "l2n", "cl2n"}));
}

const CLI::Validator kShot = CLI::IsMember({std::size_t{1}, std::size_t{5}, std::size_t{10}});

// ---- shared plumbing -------------------------------------------------------

std::size_t effective_n_way(const Options& o) {
  if (o.n_way != 0) return o.n_way;
  return parse_protocol(o.protocol) == Protocol::split_digit ? 3 : 5;
}

ProtocolSplit load_split(const Options& o) {
  const Protocol p = parse_protocol(o.protocol);
  fs::path manifest_path = o.manifest;
  if (manifest_path.empty() && fs::exists(fs::path(o.data_root) / "protocols.json"))
    manifest_path = fs::path(o.data_root) / "protocols.json";
  std::optional<ProtocolManifest> manifest;
  if (!manifest_path.empty()) manifest = ProtocolManifest::load(manifest_path);
  return build_protocol_split(p, o.data_root, manifest ? &*manifest : nullptr);
}

std::shared_ptr<const Resnet18Encoder> load_resnet(const Options& o) {
  if (o.weights.empty()) return nullptr;
  return Resnet18Encoder::load(o.weights);
}

FeatureTransform parse_transform(const std::string& s) {
  if (s == "un") return FeatureTransform::un;
  if (s == "l2n") return FeatureTransform::l2n;
  return FeatureTransform::cl2n;
}

// Applies head knobs given on the command line on top of whatever the
// checkpoint recorded.
ModelConfig head_overrides(ModelConfig cfg, const Options& o, const CLI::App* c) {
  if (c->count("--bdcspn-z")) cfg.bdcspn.pseudo_count = o.bdcspn_z;
  if (c->count("--bdcspn-eps")) cfg.bdcspn.temperature = o.bdcspn_eps;
  if (o.no_shift) cfg.bdcspn.shift = false;
  if (c->count("--simpleshot-transform")) cfg.simpleshot = parse_transform(o.simpleshot_transform);
  return cfg;
}

fs::path checkpoint_for(const Options& o, HeadKind h) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  if (!o.checkpoints.empty()) return fs::path(o.checkpoints) / fmt::format("{}.fslw", head_name(h));
  return {};
}

FewShotModel load_head_checkpoint(const Options& o, HeadKind h, std::shared_ptr<const Resnet18Encoder> resnet) {
  const fs::path path = checkpoint_for(o, h);
  if (path.empty())
    throw UsageError(fmt::format("head '{}' needs a trained checkpoint: pass --checkpoint or --checkpoints",
                                 head_name(h)));
  if (!fs::exists(path))
    throw UsageError(fmt::format("head '{}' needs a trained checkpoint, but {} does not exist", head_name(h),
                                 path.string()));
  FewShotModel model = load_checkpoint(path, resnet);
  if (model.head() != h)
    throw FormatError(fmt::format("{} holds a '{}' checkpoint, expected '{}'", path.string(),
                                  head_name(model.head()), head_name(h)));
  return model;
}

// Mean of the cached train-side embeddings, same selection as
// compute_base_mean.
Tensor cache_base_mean(const EmbeddingCache& cache, const ProtocolSplit& split) {
  CacheEmbeddingSource src(cache, class_offset(split, split.train));
  std::vector<double> acc(cache.dim, 0.0);
  std::size_t n = 0;
  for (std::size_t c = 0; c < split.train.size(); ++c) {
    std::vector<ImageRef> refs;
    for (std::size_t i = 0; i < std::min<std::size_t>(100, split.train.classes[c].count); ++i) refs.push_back({c, i});
    const Tensor emb = src.embed(refs);
    const auto v = emb.data();
    for (std::size_t k = 0; k < v.size(); ++k) acc[k % cache.dim] += v[k];
    n += refs.size();
  }
  Tensor mean({cache.dim});
  auto dst = mean.mutable_data();
  for (std::size_t j = 0; j < cache.dim; ++j) dst[j] = float(acc[j] / double(n));
  return mean;
}

// Evaluates heads over the test side, either from images (one checkpoint per
// head) or from a shared embedding cache.
class Evaluator {
 public:
  Evaluator(const Options& o, const CLI::App* cmd) : o_(o), cmd_(cmd), split_(load_split(o)) {
    resnet_ = load_resnet(o);
    if (!o.cache.empty()) {
      if (!fs::exists(o.cache)) throw UsageError(fmt::format("--cache: {} does not exist", o.cache));
      cache_ = read_embedding_cache(o.cache);
    }
  }

  const ProtocolSplit& split() const { return split_; }

  BenchmarkReport run(HeadKind h, std::size_t shot) {
    Prepared& p = prepare(h);
    EpisodeSpec spec{effective_n_way(o_), shot, o_.queries, o_.seed};
    BenchmarkReport r = evaluate(make_predictor(*p.model, *p.source), split_.test, spec, o_.tasks);
    r.protocol = o_.protocol;
    r.head = std::string(head_name(h));
    r.n_tasks = o_.tasks;
    return r;
  }

 private:
  struct Prepared {
    std::unique_ptr<FewShotModel> model;
    std::unique_ptr<ResnetFeatureMemo> memo;
    std::unique_ptr<EmbeddingSource> source;
  };

  ImageStore& store(std::size_t size) {
    auto it = stores_.find(size);
    if (it == stores_.end()) it = stores_.emplace(size, std::make_unique<ImageStore>(size)).first;
    return *it->second;
  }

  Prepared& prepare(HeadKind h) {
    auto it = prepared_.find(h);
    if (it != prepared_.end()) return it->second;
    Prepared p;
    if (cache_) {
      // The cache fixes the encoder. Only the relation head brings trained
      // parameters of its own, and those belong to one encoder.
      if (h == HeadKind::relation) {
        p.model = std::make_unique<FewShotModel>(load_head_checkpoint(o_, h, nullptr));
        if (p.model->embedding_dim() != cache_->dim)
          throw FormatError(fmt::format("relation checkpoint expects {}-dim embeddings, cache holds {}",
                                        p.model->embedding_dim(), cache_->dim));
      } else if (!o_.checkpoint.empty()) {
        p.model = std::make_unique<FewShotModel>(load_head_checkpoint(o_, h, resnet_));
      } else {
        ModelConfig cfg;
        cfg.head = h == HeadKind::synergi ? HeadKind::prototypical : h;
        cfg.image_size = 16;  // encoder unused
        p.model = std::make_unique<FewShotModel>(FewShotModel::create(cfg));
      }
      if ((h == HeadKind::relation || !o_.checkpoint.empty()) &&
          p.model->encoder_fingerprint() != cache_->fingerprint)
        throw StaleCacheError(fmt::format("{} was not produced by the encoder of the '{}' checkpoint; "
                                          "re-run export-embeddings",
                                          o_.cache, head_name(h)));
      FewShotModel rebuilt = rebuild(std::move(*p.model));
      p.model = std::make_unique<FewShotModel>(std::move(rebuilt));
      p.model->base_mean = cache_base_mean(*cache_, split_);
      p.source = std::make_unique<CacheEmbeddingSource>(*cache_, class_offset(split_, split_.test));
    } else {
      if (h == HeadKind::synergi && !resnet_) throw UsageError("head 'synergi' needs --weights");
      FewShotModel m = load_head_checkpoint(o_, h, h == HeadKind::synergi ? resnet_ : nullptr);
      p.model = std::make_unique<FewShotModel>(rebuild(std::move(m)));
      ImageStore& s = store(p.model->image_size());
      if (p.model->resnet()) p.memo = std::make_unique<ResnetFeatureMemo>(*p.model->resnet(), s);
      p.source = std::make_unique<ImageEmbeddingSource>(*p.model, s, split_.test, p.memo.get());
    }
    return prepared_.emplace(h, std::move(p)).first->second;
  }

  // Re-creates the model with command-line head knobs applied, keeping state.
  FewShotModel rebuild(FewShotModel m) {
    const ModelConfig cfg = head_overrides(m.config(), o_, cmd_);
    if (cfg.bdcspn.pseudo_count == m.config().bdcspn.pseudo_count &&
        cfg.bdcspn.temperature == m.config().bdcspn.temperature && cfg.bdcspn.shift == m.config().bdcspn.shift &&
        cfg.simpleshot == m.config().simpleshot)
      return m;
    FewShotModel out = FewShotModel::create(cfg, m.shared_resnet());
    WeightArchive state;
    for (auto& t : m.state()) state.add(t.name, t.tensor);
    out.load_state(state);
    out.base_mean = m.base_mean;
    out.set_mode(Mode::eval);
    return out;
  }

  const Options& o_;
  const CLI::App* cmd_;
  ProtocolSplit split_;
  std::shared_ptr<const Resnet18Encoder> resnet_;
  std::optional<EmbeddingCache> cache_;
  std::map<std::size_t, std::unique_ptr<ImageStore>> stores_;
  std::map<HeadKind, Prepared> prepared_;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
}

// ---- commands --------------------------------------------------------------

int cmd_synth(const Options& o, std::ostream& out) {
  const auto names = write_glyph_dataset(o.out, o.glyphs);
  out << fmt::format("wrote {} glyph classes x {} images to {}\n", names.size(), o.glyphs.per_class, o.out);
  return kExitOk;
}

int cmd_train(const Options& o, const CLI::App* cmd, std::ostream& out) {
  const HeadKind head = parse_head(o.head);
  const ProtocolSplit split = load_split(o);
  auto resnet = load_resnet(o);
  if (head == HeadKind::synergi && !resnet) throw UsageError("head 'synergi' needs --weights");

  TrainConfig cfg;
  cfg.lr0 = o.lr;
  cfg.momentum = o.momentum;
  cfg.weight_decay = o.weight_decay;
  cfg.epochs = o.epochs;
  cfg.train_tasks = o.train_tasks;
  cfg.val_tasks = o.val_tasks;
  cfg.milestones = o.milestones;
  // Default milestones beyond a short run simply never fire.
  if (!cmd->count("--milestones"))
    std::erase_if(cfg.milestones, [&](std::size_t m) { return m > cfg.epochs; });
  cfg.episode = EpisodeSpec{effective_n_way(o), o.shot, o.queries, o.seed};
  cfg.val_seed = o.val_seed;
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }

  ModelConfig mc;
  mc.head = head;
  mc.image_size = o.image_size;
  mc.seed = o.seed;
  mc = head_overrides(mc, o, cmd);
  FewShotModel model = FewShotModel::create(mc, head == HeadKind::synergi ? resnet : nullptr);
  ImageStore store(o.image_size);

  const auto t0 = std::chrono::steady_clock::now();
  const CheckpointReport r = train(cfg, split, model, store);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir = o.out;
  fs::create_directories(dir);
  json meta = {{"protocol", o.protocol},
               {"train", cfg.to_json()},
               {"best_epoch", r.best_epoch},
               {"best_val_accuracy", r.best_val_accuracy}};
  const fs::path ckpt = dir / fmt::format("{}.fslw", head_name(head));
  save_checkpoint(ckpt, model, meta);
  json report = {{"head", head_name(head)},
                 {"protocol", o.protocol},
                 {"checkpoint", ckpt.filename().string()},
                 {"config", cfg.to_json()},
                 {"train_loss", r.train_loss},
                 {"val_accuracy", r.val_accuracy},
                 {"best_epoch", r.best_epoch},
                 {"best_val_accuracy", r.best_val_accuracy},
                 {"seconds", secs}};
  write_file(dir / fmt::format("{}.train.json", head_name(head)), report.dump(2) + "\n");
  out << fmt::format("head={}\tbest_epoch={}\tval_accuracy={:.6f}\tcheckpoint={}\n", head_name(head), r.best_epoch,
                     r.best_val_accuracy, ckpt.string());
  return kExitOk;
}

int cmd_evaluate(const Options& o, const CLI::App* cmd, std::ostream& out) {
  Evaluator ev(o, cmd);
  const std::vector<BenchmarkReport> reports{ev.run(parse_head(o.head), o.shot)};
  std::ostringstream tsv;
  write_structured(tsv, reports);
  out << tsv.str();
  if (!o.out.empty()) write_file(o.out, tsv.str());
  return kExitOk;
}

int cmd_benchmark(const Options& o, const CLI::App* cmd, std::ostream& out) {
  Evaluator ev(o, cmd);
  std::vector<HeadKind> heads;
  for (const auto& n : o.heads.empty() ? head_names() : o.heads) heads.push_back(parse_head(n));
  std::vector<BenchmarkReport> reports;
  for (HeadKind h : heads) {
    for (std::size_t shot : o.shots) {
      reports.push_back(ev.run(h, shot));
      spdlog::info("{} {}-shot: accuracy {:.4f}", head_name(h), shot, reports.back().mean_accuracy);
    }
  }
  std::ostringstream table, tsv;
  write_table(table, reports);
  write_structured(tsv, reports);
  out << table.str();
  if (!o.out.empty()) {
    write_file(fs::path(o.out) / "benchmark.txt", table.str());
    write_file(fs::path(o.out) / "benchmark.tsv", tsv.str());
  }
  return kExitOk;
}

int cmd_export(const Options& o, std::ostream& out) {
  const ProtocolSplit split = load_split(o);
  auto resnet = load_resnet(o);
  std::optional<FewShotModel> model;
  if (!o.checkpoint.empty()) {
    model.emplace(load_checkpoint(o.checkpoint, resnet));
  } else if (!resnet) {
    throw UsageError("export-embeddings needs --checkpoint or --weights");
  }
  const std::size_t size = model ? model->image_size() : o.image_size;
  ImageStore store(size);
  const Resnet18Encoder* backbone = model ? model->resnet() : resnet.get();
  std::optional<ResnetFeatureMemo> memo;
  if (backbone) memo.emplace(*backbone, store);

  EmbeddingCache cache;
  cache.fingerprint = model ? model->encoder_fingerprint()
                            : fingerprint_tensors(resnet->tensors(), 0x52455331384dULL ^ (std::uint64_t(size) << 32));
  cache.dim = std::uint32_t(model ? model->embedding_dim() : Resnet18Encoder::kFeatureDim);

  if (fs::exists(o.cache) && !o.force) {
    std::optional<std::uint64_t> existing;
    try {
      existing = read_cache_fingerprint(o.cache);
    } catch (const FormatError&) {
    }
    if (existing != cache.fingerprint)
      throw StaleCacheError(fmt::format("{} exists and was written by a different encoder; pass --force to overwrite",
                                        o.cache));
  }

  std::vector<const SplitSide*> sides{&split.train, &split.test};
  if (split.val) sides.push_back(&*split.val);
  if (model) model->set_mode(Mode::eval);
  for (const SplitSide* side : sides) {
    const std::size_t offset = class_offset(split, *side);
    std::unique_ptr<ImageEmbeddingSource> source;
    if (model) source = std::make_unique<ImageEmbeddingSource>(*model, store, *side, memo ? &*memo : nullptr);
    for (std::size_t c = 0; c < side->size(); ++c) {
      const auto& cls = side->classes[c];
      Tensor emb;
      if (source) {
        std::vector<ImageRef> refs;
        for (std::size_t i = 0; i < cls.count; ++i) refs.push_back({c, i});
        emb = source->embed(refs);
      } else {
        emb = memo->features(cls.files);
      }
      const auto v = emb.data();
      for (std::size_t i = 0; i < cls.count; ++i)
        cache.records.push_back({std::int32_t(offset + c), std::int32_t(i),
                                 std::vector<float>(v.begin() + i * cache.dim, v.begin() + (i + 1) * cache.dim)});
    }
  }
  if (fs::path(o.cache).has_parent_path()) fs::create_directories(fs::path(o.cache).parent_path());
  write_embedding_cache(o.cache, cache);
  out << fmt::format("wrote {} embeddings of dim {} to {} (fingerprint {:016x})\n", cache.records.size(), cache.dim,
                     o.cache, cache.fingerprint);
  return kExitOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const LayoutError*>(&e)) return kExitLayout;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const FormatError*>(&e)) return kExitFormat;
  return kExitFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Few-shot character classification: episodic training and evaluation", "fewshot"};
  app.set_config("--config", "", "TOML config file; flags override it")->envname("FEWSHOT_CONFIG");
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic glyph dataset");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--classes", o.glyphs.classes)->check(CLI::PositiveNumber);
  synth->add_option("--per-class", o.glyphs.per_class)->check(CLI::PositiveNumber);
  synth->add_option("--image-size", o.glyphs.image_size)->check(CLI::Range(std::size_t{8}, std::size_t{512}));
  synth->add_option("--train-classes", o.glyphs.train_classes)->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.glyphs.seed);

  auto* train_cmd = app.add_subcommand("train", "episodic training of one head");
  add_data_flags(train_cmd, o);
  add_head_flags(train_cmd, o);
  train_cmd->add_option("--head", o.head)->check(CLI::IsMember(head_names()));
  train_cmd->add_option("--shot", o.shot, "support images per class")->check(kShot);
  train_cmd->add_option("--image-size", o.image_size)->check(CLI::Range(std::size_t{16}, std::size_t{512}));
  train_cmd->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", o.lr, "initial learning rate")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--momentum", o.momentum)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--weight-decay", o.weight_decay)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--milestones", o.milestones, "epochs after which the rate drops 10x")->delimiter(',');
  train_cmd->add_option("--train-tasks", o.train_tasks, "episodes per epoch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--val-tasks", o.val_tasks, "validation episodes per epoch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--val-seed", o.val_seed);
  train_cmd->add_option("--out", o.out, "directory for <head>.fslw and <head>.train.json")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate one head on the test side");
  add_data_flags(eval_cmd, o);
  add_head_flags(eval_cmd, o);
  eval_cmd->add_option("--head", o.head)->check(CLI::IsMember(head_names()));
  eval_cmd->add_option("--shot", o.shot)->check(kShot);
  eval_cmd->add_option("--tasks", o.tasks)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--checkpoint", o.checkpoint)->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoints", o.checkpoints, "directory holding <head>.fslw")->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--cache", o.cache, "embedding cache to classify from instead of images");
  eval_cmd->add_option("--out", o.out, "also write the structured record here");

  auto* bench = app.add_subcommand("benchmark", "every head at 1, 5 and 10 shots");
  add_data_flags(bench, o);
  add_head_flags(bench, o);
  bench->add_option("--heads", o.heads)->check(CLI::IsMember(head_names()))->delimiter(',');
  bench->add_option("--shot,--shots", o.shots)->check(kShot)->delimiter(',');
  bench->add_option("--tasks", o.tasks)->check(CLI::PositiveNumber);
  bench->add_option("--checkpoints", o.checkpoints, "directory holding <head>.fslw")->check(CLI::ExistingDirectory);
  bench->add_option("--cache", o.cache, "embedding cache shared by all heads");
  bench->add_option("--out", o.out, "directory for benchmark.txt and benchmark.tsv");

  auto* exp = app.add_subcommand("export-embeddings", "embed every image of a protocol into a cache file");
  add_data_flags(exp, o);
  exp->add_option("--checkpoint", o.checkpoint, "encoder checkpoint (default: ResNet18 features of --weights)")
      ->check(CLI::ExistingFile);
  exp->add_option("--image-size", o.image_size)->check(CLI::Range(std::size_t{16}, std::size_t{512}));
  exp->add_option("--cache", o.cache, "output cache file")->required();
  exp->add_flag("--force", o.force, "overwrite a cache written by another encoder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (train_cmd->parsed()) return cmd_train(o, train_cmd, out);
    if (eval_cmd->parsed()) return cmd_evaluate(o, eval_cmd, out);
    if (bench->parsed()) return cmd_benchmark(o, bench, out);
    if (exp->parsed()) return cmd_export(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"fewshot"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(int(argv.size()), argv.data(), out, err);
}

}  // namespace fsl::cli
