#include "fsl/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

void require_rows(const Tensor& x, std::string_view what) {
  if (x.rank() != 2) throw ShapeError(fmt::format("{} must be [rows x dim], got {}", what, shape_str(x.shape())));
}

void require_same_dim(const Tensor& a, const Tensor& b) {
  require_rows(a, "query embeddings");
  require_rows(b, "support embeddings");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError(fmt::format("embedding dims differ: {} vs {}", a.dim(1), b.dim(1)));
  }
}

std::vector<double> row_norms(const Tensor& x, std::string_view what) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += double(x.at(i * d + k)) * x.at(i * d + k);
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw DegenerateFeatureError(fmt::format("{} row {} has zero norm", what, i));
  }
  return norms;
}

Tensor l2_normalize(const Tensor& x, std::string_view what) {
  const auto norms = row_norms(x, what);
  const std::size_t d = x.dim(1);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t k = 0; k < d; ++k) o[i * d + k] = static_cast<float>(x.at(i * d + k) / norms[i]);
  }
  return out;
}

Tensor column_mean(const Tensor& x) {
  const std::vector<std::size_t> one_group(x.dim(0), 0);
  return segment_mean(x, one_group, 1);
}

// Softmax of `scale * values` along rows, as a probability ScoreMatrix.
ScoreMatrix probabilities(const Tensor& values, float scale) {
  return ScoreMatrix{softmax(fsl::scale(values, scale), 1), ScoreKind::probability};
}

}  // namespace

std::vector<std::size_t> ScoreMatrix::predictions() const {
  if (kind == ScoreKind::distance) return argmax_rows(scale(values, -1.0f));
  return argmax_rows(values);
}

std::size_t episode_way(std::span<const std::size_t> labels) {
  if (labels.empty()) throw EpisodeShapeError("empty support set");
  const std::size_t n = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t l : labels) ++counts[l];
  for (std::size_t c = 0; c < n; ++c) {
    if (counts[c] == 0) throw EpisodeShapeError(fmt::format("episode class {} has no support rows", c));
    if (counts[c] != counts[0]) {
      throw EpisodeShapeError(fmt::format("episode class {} has {} support rows, class 0 has {}", c, counts[c], counts[0]));
    }
  }
  return n;
}

PrototypeSet compute_prototypes(const Tensor& support, std::span<const std::size_t> labels, GradTape* tape) {
  require_rows(support, "support embeddings");
  if (support.dim(0) != labels.size()) {
    throw ShapeError(fmt::format("{} support rows but {} labels", support.dim(0), labels.size()));
  }
  const std::size_t n = episode_way(labels);
  PrototypeSet set;
  set.class_ids.resize(n);
  std::iota(set.class_ids.begin(), set.class_ids.end(), std::size_t{0});
  set.prototypes = segment_mean(support, labels, n, tape);
  return set;
}

Tensor prototypical_logits(const Tensor& query, const Tensor& prototypes, GradTape* tape) {
  require_same_dim(query, prototypes);
  return scale(euclidean_distances(query, prototypes, tape), -1.0f, tape);
}

ScoreMatrix prototypical_classify(const Tensor& query, const PrototypeSet& protos) {
  return ScoreMatrix{softmax(prototypical_logits(query, protos.prototypes), 1), ScoreKind::probability};
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_dim(a, b);
  return matmul(l2_normalize(a, "embedding"), transpose(l2_normalize(b, "embedding")));
}

ScoreMatrix simpleshot_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                                const std::optional<Tensor>& base_mean, FeatureTransform transform) {
  require_same_dim(query, support);
  Tensor q = query, s = support;
  if (transform == FeatureTransform::cl2n) {
    if (!base_mean) throw ContractError("CL2N needs the base-class mean feature");
    if (base_mean->numel() != query.dim(1)) {
      throw ShapeError(fmt::format("base mean has {} entries, embeddings have {}", base_mean->numel(), query.dim(1)));
    }
    const Tensor m = reshape(*base_mean, {query.dim(1)});
    q = sub(q, m);
    s = sub(s, m);
  }
  if (transform != FeatureTransform::un) {
    q = l2_normalize(q, "query embedding");
    s = l2_normalize(s, "support embedding");
  }
  const PrototypeSet centroids = compute_prototypes(s, labels);
  return prototypical_classify(q, centroids);
}

ScoreMatrix bdcspn_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                            const BdcspnParams& params) {
  require_same_dim(query, support);
  const std::size_t nq = query.dim(0), d = query.dim(1);

  Tensor q = query;
  if (params.shift) {
    // Delta = mean(support) - mean(query), broadcast over query rows.
    const Tensor delta = sub(column_mean(support), column_mean(query));
    q = add(query, delta);
  }
  const PrototypeSet initial = compute_prototypes(support, labels);
  const std::size_t n = initial.class_ids.size();

  std::size_t z = params.pseudo_count;
  if (z > nq) {
    spdlog::warn("BD-CSPN pseudo_count {} exceeds the {} available queries; clamping", z, nq);
    z = nq;
  }

  // Pseudo-label every query with its most similar prototype.
  const Tensor cos0 = cosine_similarity(q, initial.prototypes);
  const auto assigned = argmax_rows(cos0);
  std::vector<std::vector<std::size_t>> kept(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < nq; ++i) {
      if (assigned[i] == c) members.push_back(i);
    }
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return cos0.at(a, c) > cos0.at(b, c); });
    members.resize(std::min(members.size(), z));
    kept[c] = std::move(members);
  }

  Tensor rectified({n, d});
  auto r = rectified.mutable_data();
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<const float*> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) rows.push_back(support.data().data() + i * d);
    }
    for (std::size_t i : kept[c]) rows.push_back(q.data().data() + i * d);

    Tensor set({rows.size(), d});
    auto sv = set.mutable_data();
    for (std::size_t j = 0; j < rows.size(); ++j) std::copy_n(rows[j], d, sv.begin() + static_cast<std::ptrdiff_t>(j * d));

    std::vector<float> w(rows.size(), 1.0f / static_cast<float>(rows.size()));
    if (!params.uniform_weights) {
      const Tensor proto = slice_rows(initial.prototypes, c, c + 1);
      const Tensor weights = softmax(scale(transpose(cosine_similarity(set, proto)), params.temperature), 1);
      std::copy(weights.data().begin(), weights.data().end(), w.begin());
    }
    for (std::size_t j = 0; j < rows.size(); ++j) {
      for (std::size_t k = 0; k < d; ++k) r[c * d + k] += w[j] * sv[j * d + k];
    }
  }
  return probabilities(cosine_similarity(q, rectified), params.temperature);
}

ScoreMatrix matching_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels) {
  require_same_dim(query, support);
  if (support.dim(0) != labels.size()) {
    throw ShapeError(fmt::format("{} support rows but {} labels", support.dim(0), labels.size()));
  }
  const std::size_t n = episode_way(labels);
  const Tensor attention = softmax(cosine_similarity(query, support), 1);
  // probs[q, c] = sum of attention over support items labelled c.
  const Tensor by_class = transpose(segment_sum(transpose(attention), labels, n));
  return ScoreMatrix{by_class, ScoreKind::probability};
}

RelationModule RelationModule::create(std::size_t embedding_dim, Rng& rng) {
  return RelationModule{make_linear(2 * embedding_dim, kHidden1, rng), make_linear(kHidden1, kHidden2, rng),
                        make_linear(kHidden2, 1, rng)};
}

std::vector<NamedTensor> RelationModule::parameters() const {
  return {{"fc1.weight", fc1.weight}, {"fc1.bias", fc1.bias}, {"fc2.weight", fc2.weight},
          {"fc2.bias", fc2.bias},     {"fc3.weight", fc3.weight}, {"fc3.bias", fc3.bias}};
}

Tensor relation_scores(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                       const RelationModule& module, GradTape* tape) {
  require_same_dim(query, support);
  if (module.fc1.weight.dim(1) != 2 * query.dim(1)) {
    throw ShapeError(fmt::format("relation module expects {}-d embeddings, got {}", module.embedding_dim(),
                                 query.dim(1)));
  }
  if (support.dim(0) != labels.size()) {
    throw ShapeError(fmt::format("{} support rows but {} labels", support.dim(0), labels.size()));
  }
  const std::size_t n = episode_way(labels), nq = query.dim(0);
  const Tensor class_features = segment_sum(support, labels, n, tape);
  // Pair row q*N + c holds concat(class_feature_c, query_q).
  std::vector<std::size_t> class_rows(nq * n), query_rows(nq * n);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t c = 0; c < n; ++c) {
      class_rows[i * n + c] = c;
      query_rows[i * n + c] = i;
    }
  }
  Tensor pairs = concat_cols(gather_rows(class_features, class_rows, tape), gather_rows(query, query_rows, tape), tape);
  Tensor h = relu(linear(pairs, module.fc1, tape), tape);
  h = relu(linear(h, module.fc2, tape), tape);
  return reshape(sigmoid(linear(h, module.fc3, tape), tape), {nq, n}, tape);
}

ScoreMatrix relation_classify(const Tensor& query, const Tensor& support, std::span<const std::size_t> labels,
                              const RelationModule& module) {
  return ScoreMatrix{relation_scores(query, support, labels, module), ScoreKind::relation};
}

Tensor relation_loss(const Tensor& scores, std::span<const std::size_t> query_labels, GradTape* tape) {
  require_rows(scores, "relation scores");
  if (scores.dim(0) != query_labels.size()) {
    throw ShapeError(fmt::format("{} score rows but {} query labels", scores.dim(0), query_labels.size()));
  }
  const std::size_t n = scores.dim(1);
  Tensor target(scores.shape(), 0.0f);
  auto t = target.mutable_data();
  for (std::size_t i = 0; i < query_labels.size(); ++i) {
    if (query_labels[i] >= n) throw IndexError(fmt::format("query label {} out of range for {} classes", query_labels[i], n));
    t[i * n + query_labels[i]] = 1.0f;
  }
  const Tensor diff = sub(scores, target, tape);
  return mean(mul(diff, diff, tape), tape);
}

ScoreMatrix synergiprotonet_classify(const Tensor& support_images, std::span<const std::size_t> support_labels,
                                     const Tensor& query_images, const HybridEncoder& hybrid) {
  const PrototypeSet protos = compute_prototypes(hybrid.embed(support_images), support_labels);
  return prototypical_classify(hybrid.embed(query_images), protos);
}

}  // namespace fsl
