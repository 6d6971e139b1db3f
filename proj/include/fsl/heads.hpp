#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fsl/encoders.hpp"
#include "fsl/nn.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

enum class ScoreKind { distance, similarity, probability, relation };

struct ScoreMatrix {
  Tensor values;  // [queries x classes]
  ScoreKind kind = ScoreKind::probability;

  // Best class per query (argmin for distances, argmax otherwise); ties go to
  // the lowest class index.
  std::vector<std::size_t> predictions() const;
};

struct PrototypeSet {
  std::vector<std::size_t> class_ids;  // episode labels 0..N-1
  Tensor prototypes;                   // [N x D]
};

// Number of classes in an episode's support labels. EpisodeShapeError unless
// labels cover 0..N-1 with the same number of rows each.
std::size_t episode_way(std::span<const std::size_t> support_labels);

PrototypeSet compute_prototypes(const Tensor& support, std::span<const std::size_t> labels,
                                GradTape* tape = nullptr);

// -||q - p_c||, the logits whose softmax is the prototypical posterior.
Tensor prototypical_logits(const Tensor& query, const Tensor& prototypes, GradTape* tape = nullptr);
ScoreMatrix prototypical_classify(const Tensor& query, const PrototypeSet& protos);

enum class FeatureTransform { un, l2n, cl2n };

// Nearest centroid in the transformed space; probabilities are the softmax of
// negative distances. `base_mean` is required for CL2N.
ScoreMatrix simpleshot_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                                const std::optional<Tensor>& base_mean, FeatureTransform transform);

struct BdcspnParams {
  std::size_t pseudo_count = 8;  // Z, per class
  float temperature = 10.0f;     // epsilon
  bool shift = true;
  // Plain mean instead of the softmax-weighted sum when rectifying.
  bool uniform_weights = false;
};

ScoreMatrix bdcspn_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                            const BdcspnParams& params);

ScoreMatrix matching_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels);

// MLP [2D -> 256 -> 64 -> 1] scoring concat(class feature, query).
struct RelationModule {
  static constexpr std::size_t kHidden1 = 256;
  static constexpr std::size_t kHidden2 = 64;

  LinearParams fc1, fc2, fc3;

  static RelationModule create(std::size_t embedding_dim, Rng& rng);
  std::size_t embedding_dim() const { return fc1.weight.dim(1) / 2; }
  std::vector<NamedTensor> parameters() const;
};

// [Q x N] sigmoid scores.
Tensor relation_scores(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                       const RelationModule& module, GradTape* tape = nullptr);
ScoreMatrix relation_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                              const RelationModule& module);
// Mean squared error against one-hot targets.
Tensor relation_loss(const Tensor& scores, std::span<const std::size_t> query_labels, GradTape* tape = nullptr);

// Prototypical classification over hybrid embeddings.
ScoreMatrix synergiprotonet_classify(const Tensor& support_images, std::span<const std::size_t> support_labels,
                                     const Tensor& query_images, const HybridEncoder& hybrid);

// Row-wise cosine similarities [m x n]. DegenerateFeatureError on a zero row.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace fsl
