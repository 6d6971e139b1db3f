#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "fsl/archive.hpp"
#include "fsl/dataset.hpp"
#include "fsl/encoders.hpp"
#include "fsl/episodes.hpp"
#include "fsl/heads.hpp"
#include "fsl/metrics.hpp"

namespace fsl {

enum class HeadKind { matching, relation, bdcspn, simpleshot, prototypical, synergi };

inline constexpr std::array<HeadKind, 6> kAllHeads = {HeadKind::matching,   HeadKind::relation,
                                                      HeadKind::bdcspn,     HeadKind::simpleshot,
                                                      HeadKind::prototypical, HeadKind::synergi};

std::string_view head_name(HeadKind h);
// ContractError on an unknown name.
HeadKind parse_head(std::string_view name);

struct ModelConfig {
  HeadKind head = HeadKind::prototypical;
  std::size_t image_size = 84;
  std::uint64_t seed = 0;  // parameter init
  BdcspnParams bdcspn;
  FeatureTransform simpleshot = FeatureTransform::cl2n;
};

// A head together with the encoder it classifies with: CNN4 for every head
// except synergi, which uses CNN4 + frozen ResNet18. The relation head also
// owns its MLP.
class FewShotModel {
 public:
  // ContractError if synergi is requested without a ResNet.
  static FewShotModel create(const ModelConfig& cfg, std::shared_ptr<const Resnet18Encoder> resnet = nullptr);

  const ModelConfig& config() const { return cfg_; }
  HeadKind head() const { return cfg_.head; }
  std::size_t image_size() const { return cfg_.image_size; }
  std::size_t embedding_dim() const;
  bool uses_resnet() const { return cfg_.head == HeadKind::synergi; }

  Cnn4Encoder& cnn() { return cnn_; }
  const Resnet18Encoder* resnet() const { return resnet_.get(); }
  std::shared_ptr<const Resnet18Encoder> shared_resnet() const { return resnet_; }
  RelationModule* relation() { return relation_ ? &*relation_ : nullptr; }

  void set_mode(Mode m) { cnn_.set_mode(m); }
  Mode mode() const { return cnn_.mode(); }

  // Trainable tensors, prefixed "cnn." / "relation.".
  std::vector<NamedTensor> parameters() const;
  // parameters() plus BN running statistics.
  std::vector<NamedTensor> state() const;
  void load_state(const WeightArchive& source);

  // [n x 3 x S x S] pixels -> [n x D]. `resnet_features` supplies the frozen
  // half for synergi when already known.
  Tensor embed(const Tensor& images, const Tensor* resnet_features = nullptr, GradTape* tape = nullptr);

  // Training signal for one episode: cross-entropy over negative prototype
  // distances, or the relation MSE for the relation head.
  Tensor episode_loss(const Tensor& support, std::span<const std::size_t> support_labels, const Tensor& query,
                      std::span<const std::size_t> query_labels, GradTape* tape = nullptr) const;

  // Head-specific scoring of embedded queries.
  ScoreMatrix classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels) const;

  // Mean base-class embedding, needed by simpleshot's CL2N transform.
  std::optional<Tensor> base_mean;

  // Identifies the embedding function: CNN state, ResNet weights, input size.
  std::uint64_t encoder_fingerprint() const;

 private:
  ModelConfig cfg_;
  Cnn4Encoder cnn_;
  std::shared_ptr<const Resnet18Encoder> resnet_;
  std::optional<RelationModule> relation_;
};

// Memoized ResNet18 features per image file.
class ResnetFeatureMemo {
 public:
  ResnetFeatureMemo(const Resnet18Encoder& resnet, ImageStore& store) : resnet_(resnet), store_(store) {}
  // [n x 512]
  Tensor features(const std::vector<std::filesystem::path>& files);

 private:
  const Resnet18Encoder& resnet_;
  ImageStore& store_;
  std::map<std::string, std::vector<float>> memo_;
};

// Embeddings of the images of one split side, looked up by ImageRef.
class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual Tensor embed(const std::vector<ImageRef>& refs) = 0;
};

// Runs the model in eval mode and memoizes per image. The model must not
// change while the source is in use.
class ImageEmbeddingSource : public EmbeddingSource {
 public:
  ImageEmbeddingSource(FewShotModel& model, ImageStore& store, const SplitSide& side,
                       ResnetFeatureMemo* resnet_memo = nullptr)
      : model_(model), store_(store), side_(side), resnet_memo_(resnet_memo) {}
  Tensor embed(const std::vector<ImageRef>& refs) override;

 private:
  FewShotModel& model_;
  ImageStore& store_;
  const SplitSide& side_;
  ResnetFeatureMemo* resnet_memo_;
  std::map<ImageRef, std::vector<float>> memo_;
};

// Serves rows of an embedding cache. Class ids in the cache are global:
// `class_offset` + the class index within the side.
class CacheEmbeddingSource : public EmbeddingSource {
 public:
  CacheEmbeddingSource(const EmbeddingCache& cache, std::size_t class_offset);
  Tensor embed(const std::vector<ImageRef>& refs) override;

 private:
  std::uint32_t dim_;
  std::map<std::pair<std::int64_t, std::int64_t>, const std::vector<float>*> rows_;
};

// Global class ids: train classes, then test, then validation classes.
std::size_t class_offset(const ProtocolSplit& split, const SplitSide& side);

// Query predictions (episode labels) for one episode.
using Predictor = std::function<std::vector<std::size_t>(const Episode&)>;

Predictor make_predictor(const FewShotModel& model, EmbeddingSource& source);

// Mean over the train side (at most `per_class` images per class, in sorted
// order) of the model's eval-mode embeddings.
Tensor compute_base_mean(FewShotModel& model, ImageStore& store, const SplitSide& train_side,
                         std::size_t per_class = 100, ResnetFeatureMemo* memo = nullptr);

// n_tasks episodes from `side`, episode i drawn from stream i of spec.seed, so
// a report can be replayed from its seed.
BenchmarkReport evaluate(const Predictor& predict, const SplitSide& side, const EpisodeSpec& spec,
                         std::size_t n_tasks);

}  // namespace fsl
