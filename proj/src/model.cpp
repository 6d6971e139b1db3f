#include "fsl/model.hpp"

#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "fsl/errors.hpp"

namespace fs = std::filesystem;

namespace fsl {

std::string_view head_name(HeadKind h) {
  switch (h) {
    case HeadKind::matching: return "matching";
    case HeadKind::relation: return "relation";
    case HeadKind::bdcspn: return "bdcspn";
    case HeadKind::simpleshot: return "simpleshot";
    case HeadKind::prototypical: return "prototypical";
    case HeadKind::synergi: return "synergi";
  }
  return "?";
}

HeadKind parse_head(std::string_view name) {
  for (auto h : kAllHeads) {
    if (head_name(h) == name) return h;
  }
  throw ContractError(fmt::format(
      "unknown head '{}' (expected matching, relation, bdcspn, simpleshot, prototypical or synergi)", name));
}

FewShotModel FewShotModel::create(const ModelConfig& cfg, std::shared_ptr<const Resnet18Encoder> resnet) {
  if (cfg.head == HeadKind::synergi && !resnet) throw ContractError("the synergi head needs ResNet18 weights");
  FewShotModel m;
  m.cfg_ = cfg;
  Rng rng(cfg.seed);
  m.cnn_ = Cnn4Encoder::create(rng);
  if (cfg.head == HeadKind::synergi) m.resnet_ = std::move(resnet);
  if (cfg.head == HeadKind::relation) {
    m.relation_ = RelationModule::create(Cnn4Encoder::output_dim(cfg.image_size, cfg.image_size), rng);
  }
  return m;
}

std::size_t FewShotModel::embedding_dim() const {
  return uses_resnet() ? HybridEncoder::dim(cfg_.image_size, cfg_.image_size)
                       : Cnn4Encoder::output_dim(cfg_.image_size, cfg_.image_size);
}

namespace {

void append_prefixed(std::vector<NamedTensor>& out, const std::vector<NamedTensor>& in, std::string_view prefix) {
  for (const auto& t : in) out.push_back({std::string(prefix) + t.name, t.tensor});
}

}  // namespace

std::vector<NamedTensor> FewShotModel::parameters() const {
  std::vector<NamedTensor> out;
  append_prefixed(out, cnn_.parameters(), "cnn.");
  if (relation_) append_prefixed(out, relation_->parameters(), "relation.");
  return out;
}

std::vector<NamedTensor> FewShotModel::state() const {
  std::vector<NamedTensor> out;
  append_prefixed(out, cnn_.state(), "cnn.");
  if (relation_) append_prefixed(out, relation_->parameters(), "relation.");
  return out;
}

void FewShotModel::load_state(const WeightArchive& source) {
  cnn_.load_state(source, "cnn.");
  if (relation_) {
    for (auto& p : relation_->parameters()) {
      const Tensor& src = source.get("relation." + p.name);
      if (src.shape() != p.tensor.shape()) {
        throw FormatError(fmt::format("relation.{} has shape {}, expected {}", p.name, shape_str(src.shape()),
                                      shape_str(p.tensor.shape())));
      }
      auto dst = p.tensor.mutable_data();
      std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
  }
}

Tensor FewShotModel::embed(const Tensor& images, const Tensor* resnet_features, GradTape* tape) {
  if (images.rank() != 4 || images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size) {
    throw ShapeError(fmt::format("model expects [n x 3 x {0} x {0}] images, got {1}", cfg_.image_size,
                                 shape_str(images.shape())));
  }
  if (!uses_resnet()) return cnn_.forward(images, tape);
  HybridEncoder hybrid{&cnn_, resnet_.get()};
  return resnet_features ? hybrid.embed_with_features(images, *resnet_features, tape) : hybrid.embed(images, tape);
}

Tensor FewShotModel::episode_loss(const Tensor& support, std::span<const std::size_t> support_labels,
                                  const Tensor& query, std::span<const std::size_t> query_labels,
                                  GradTape* tape) const {
  if (cfg_.head == HeadKind::relation) {
    return relation_loss(relation_scores(query, support, support_labels, *relation_, tape), query_labels, tape);
  }
  const PrototypeSet protos = compute_prototypes(support, support_labels, tape);
  return cross_entropy(prototypical_logits(query, protos.prototypes, tape), query_labels, tape);
}

ScoreMatrix FewShotModel::classify(const Tensor& query, const Tensor& support,
                                   std::span<const std::size_t> labels) const {
  switch (cfg_.head) {
    case HeadKind::matching: return matching_classify(query, support, labels);
    case HeadKind::relation: return relation_classify(query, support, labels, *relation_);
    case HeadKind::bdcspn: return bdcspn_classify(query, support, labels, cfg_.bdcspn);
    case HeadKind::simpleshot: return simpleshot_classify(query, support, labels, base_mean, cfg_.simpleshot);
    case HeadKind::prototypical:
    case HeadKind::synergi: return prototypical_classify(query, compute_prototypes(support, labels));
  }
  throw ContractError("unhandled head");
}

std::uint64_t FewShotModel::encoder_fingerprint() const {
  const auto cnn_state = cnn_.state();
  std::uint64_t salt = 0x46534c454e43ULL ^ (std::uint64_t(cfg_.image_size) << 32);
  if (resnet_) salt ^= resnet_->fingerprint();
  return fingerprint_tensors(cnn_state, salt);
}

// ---- embedding sources -------------------------------------------------------

namespace {

Tensor rows_to_tensor(const std::vector<const std::vector<float>*>& rows, std::size_t dim) {
  Tensor out({rows.size(), dim});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::memcpy(dst.data() + i * dim, rows[i]->data(), dim * sizeof(float));
  return out;
}

std::vector<float> row_of(const Tensor& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return std::vector<float>(t.data().begin() + std::ptrdiff_t(r * d), t.data().begin() + std::ptrdiff_t((r + 1) * d));
}

}  // namespace

Tensor ResnetFeatureMemo::features(const std::vector<fs::path>& files) {
  std::vector<fs::path> missing;
  for (const auto& f : files) {
    if (!memo_.count(f.string())) missing.push_back(f);
  }
  // Bounded batches keep the activation footprint small at 84x84.
  constexpr std::size_t kBatch = 32;
  for (std::size_t b = 0; b < missing.size(); b += kBatch) {
    std::vector<fs::path> chunk(missing.begin() + std::ptrdiff_t(b),
                                missing.begin() + std::ptrdiff_t(std::min(missing.size(), b + kBatch)));
    const Tensor feats = resnet_.forward(store_.batch(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) memo_[chunk[i].string()] = row_of(feats, i);
  }
  std::vector<const std::vector<float>*> rows;
  for (const auto& f : files) rows.push_back(&memo_.at(f.string()));
  return rows_to_tensor(rows, Resnet18Encoder::kFeatureDim);
}

Tensor ImageEmbeddingSource::embed(const std::vector<ImageRef>& refs) {
  std::vector<ImageRef> missing;
  for (const auto& r : refs) {
    if (!memo_.count(r) && std::find(missing.begin(), missing.end(), r) == missing.end()) missing.push_back(r);
  }
  if (!missing.empty()) {
    const Mode saved = model_.mode();
    model_.set_mode(Mode::eval);
    constexpr std::size_t kBatch = 64;
    for (std::size_t b = 0; b < missing.size(); b += kBatch) {
      std::vector<fs::path> files;
      for (std::size_t i = b; i < std::min(missing.size(), b + kBatch); ++i) {
        files.push_back(side_.file(missing[i].class_index, missing[i].image_index));
      }
      const Tensor images = store_.batch(files);
      Tensor feats;
      if (model_.uses_resnet() && resnet_memo_) feats = resnet_memo_->features(files);
      const Tensor emb = model_.embed(images, feats.defined() ? &feats : nullptr);
      for (std::size_t i = 0; i < files.size(); ++i) memo_[missing[b + i]] = row_of(emb, i);
    }
    model_.set_mode(saved);
  }
  std::vector<const std::vector<float>*> rows;
  for (const auto& r : refs) rows.push_back(&memo_.at(r));
  return rows_to_tensor(rows, model_.embedding_dim());
}

CacheEmbeddingSource::CacheEmbeddingSource(const EmbeddingCache& cache, std::size_t class_offset) : dim_(cache.dim) {
  for (const auto& rec : cache.records) {
    if (rec.class_id < std::int64_t(class_offset)) continue;
    rows_[{rec.class_id - std::int64_t(class_offset), rec.image_index}] = &rec.values;
  }
}

Tensor CacheEmbeddingSource::embed(const std::vector<ImageRef>& refs) {
  std::vector<const std::vector<float>*> rows;
  for (const auto& r : refs) {
    auto it = rows_.find({std::int64_t(r.class_index), std::int64_t(r.image_index)});
    if (it == rows_.end()) {
      throw LayoutError(fmt::format("embedding cache has no record for class {} image {}", r.class_index,
                                    r.image_index));
    }
    rows.push_back(it->second);
  }
  return rows_to_tensor(rows, dim_);
}

std::size_t class_offset(const ProtocolSplit& split, const SplitSide& side) {
  if (&side == &split.train) return 0;
  if (&side == &split.test) return split.train.size();
  if (split.val && &side == &*split.val) return split.train.size() + split.test.size();
  throw ContractError("side does not belong to this split");
}

Predictor make_predictor(const FewShotModel& model, EmbeddingSource& source) {
  return [&model, &source](const Episode& ep) {
    const Tensor support = source.embed(ep.support);
    const Tensor query = source.embed(ep.query);
    return model.classify(query, support, ep.support_labels).predictions();
  };
}

Tensor compute_base_mean(FewShotModel& model, ImageStore& store, const SplitSide& train_side, std::size_t per_class,
                         ResnetFeatureMemo* memo) {
  ImageEmbeddingSource source(model, store, train_side, memo);
  std::vector<double> acc(model.embedding_dim(), 0.0);
  std::size_t n = 0;
  for (std::size_t c = 0; c < train_side.size(); ++c) {
    std::vector<ImageRef> refs;
    for (std::size_t i = 0; i < std::min(per_class, train_side.classes[c].count); ++i) refs.push_back({c, i});
    const Tensor emb = source.embed(refs);
    const auto v = emb.data();
    for (std::size_t r = 0; r < refs.size(); ++r)
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[r * acc.size() + j];
    n += refs.size();
  }
  if (n == 0) throw LayoutError("no train images to compute the base-class mean from");
  Tensor mean({acc.size()});
  auto dst = mean.mutable_data();
  for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = float(acc[j] / double(n));
  return mean;
}

BenchmarkReport evaluate(const Predictor& predict, const SplitSide& side, const EpisodeSpec& spec,
                         std::size_t n_tasks) {
  if (n_tasks == 0) throw ContractError("evaluation needs at least one task");
  BenchmarkReport report;
  report.shot = spec.k_shot;
  report.n_way = spec.n_way;
  report.seed = spec.seed;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const Episode ep = sample_episode(side, spec, i);
    const auto pred = predict(ep);
    report.episodes.push_back({i, accuracy(pred, ep.query_labels), macro_f1(pred, ep.query_labels, ep.n_way())});
  }
  report.finalize();
  return report;
}

}  // namespace fsl
