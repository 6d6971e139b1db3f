#include "fsl/trainer.hpp"

#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fsl/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace fsl {

void TrainConfig::validate() const {
  if (!(lr0 >= 0) || !(momentum >= 0) || !(weight_decay >= 0) || !(gamma > 0)) {
    throw ContractError("lr, momentum and weight decay must be >= 0 and gamma > 0");
  }
  if (epochs == 0 || train_tasks == 0 || val_tasks == 0) {
    throw ContractError("epochs, train tasks and validation tasks must be positive");
  }
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 1 || milestones[i] > epochs || (i > 0 && milestones[i] <= milestones[i - 1])) {
      throw ContractError(fmt::format("milestones must be strictly increasing within [1, {}]", epochs));
    }
  }
  episode.validate();
}

json TrainConfig::to_json() const {
  return json{{"lr0", lr0},
              {"momentum", momentum},
              {"weight_decay", weight_decay},
              {"epochs", epochs},
              {"train_tasks", train_tasks},
              {"val_tasks", val_tasks},
              {"milestones", milestones},
              {"gamma", gamma},
              {"n_way", episode.n_way},
              {"k_shot", episode.k_shot},
              {"q_queries", episode.q_queries},
              {"seed", episode.seed},
              {"val_seed", val_seed}};
}

double multistep_lr(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr0;
  for (auto m : cfg.milestones) {
    if (m <= epoch) lr *= cfg.gamma;
  }
  return lr;
}

void sgd_step(std::span<const Tensor> params, SgdState& state, double lr, double momentum, double weight_decay) {
  if (state.velocity.size() < params.size()) state.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) throw ContractError(fmt::format("trainable parameter {} has no gradient", i));
    auto& v = state.velocity[i];
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0f);
    const auto g = p.grad();
    auto theta = p.mutable_data();
    const float fl = float(lr), fm = float(momentum), fwd = float(weight_decay);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = fm * v[j] + (g[j] + fwd * theta[j]);
      theta[j] -= fl * v[j];
    }
  }
}

namespace {

std::vector<fs::path> files_of(const SplitSide& side, const std::vector<ImageRef>& refs) {
  std::vector<fs::path> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(side.file(r.class_index, r.image_index));
  return out;
}

std::vector<NamedTensor> deep_copy(const std::vector<NamedTensor>& state) {
  std::vector<NamedTensor> out;
  for (const auto& t : state) out.push_back({t.name, t.tensor.clone()});
  return out;
}

void restore(FewShotModel& model, const std::vector<NamedTensor>& snapshot) {
  WeightArchive a;
  for (const auto& t : snapshot) a.add(t.name, t.tensor);
  model.load_state(a);
}

}  // namespace

double validation_accuracy(const TrainConfig& cfg, const SplitSide& side, FewShotModel& model, ImageStore& store,
                           ResnetFeatureMemo* memo) {
  EpisodeSpec spec = cfg.episode;
  spec.seed = cfg.val_seed;
  ImageEmbeddingSource source(model, store, side, memo);
  return evaluate(make_predictor(model, source), side, spec, cfg.val_tasks).mean_accuracy;
}

CheckpointReport train(const TrainConfig& cfg, const ProtocolSplit& split, FewShotModel& model, ImageStore& store,
                       const TrainHooks& hooks) {
  cfg.validate();
  if (store.image_size() != model.image_size()) {
    throw ContractError(fmt::format("image store serves {}px images, the model expects {}px", store.image_size(),
                                    model.image_size()));
  }
  check_side(split.train, cfg.episode);
  check_side(split.validation(), cfg.episode);

  std::optional<ResnetFeatureMemo> memo;
  if (model.uses_resnet()) memo.emplace(*model.resnet(), store);
  const bool needs_base_mean = model.head() == HeadKind::simpleshot &&
                               model.config().simpleshot == FeatureTransform::cl2n;

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  SgdState sgd;
  CheckpointReport report;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = multistep_lr(epoch, cfg);
    double loss_sum = 0;
    for (std::size_t task = 0; task < cfg.train_tasks; ++task) {
      const Episode ep = sample_episode(split.train, cfg.episode, (epoch - 1) * cfg.train_tasks + task);
      std::vector<ImageRef> refs = ep.support;
      refs.insert(refs.end(), ep.query.begin(), ep.query.end());
      const auto files = files_of(split.train, refs);
      const Tensor images = store.batch(files);
      Tensor feats;
      if (memo) feats = memo->features(files);

      model.set_mode(Mode::train);
      GradTape tape;
      const Tensor emb = model.embed(images, feats.defined() ? &feats : nullptr, &tape);
      const std::size_t ns = ep.support.size();
      const Tensor support = slice_rows(emb, 0, ns, &tape);
      const Tensor query = slice_rows(emb, ns, emb.dim(0), &tape);
      const Tensor loss = model.episode_loss(support, ep.support_labels, query, ep.query_labels, &tape);
      const float value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError(fmt::format("non-finite training loss {} at epoch {}, task {}, lr {}", value, epoch,
                                       task, lr));
      }
      for (auto& p : params) p.clear_grad();
      tape.backward(loss);
      sgd_step(params, sgd, lr, cfg.momentum, cfg.weight_decay);
      loss_sum += value;
    }
    for (auto& p : params) p.clear_grad();
    report.train_loss.push_back(loss_sum / double(cfg.train_tasks));

    model.set_mode(Mode::eval);
    if (needs_base_mean) model.base_mean = compute_base_mean(model, store, split.train, 100, memo ? &*memo : nullptr);
    const double acc = validation_accuracy(cfg, split.validation(), model, store, memo ? &*memo : nullptr);
    report.val_accuracy.push_back(acc);
    spdlog::info("epoch {}/{}: lr {:.2e}, train loss {:.4f}, val accuracy {:.4f}", epoch, cfg.epochs, lr,
                 report.train_loss.back(), acc);
    if (hooks.on_epoch) hooks.on_epoch(epoch, report.train_loss.back(), acc, lr);
    if (acc > report.best_val_accuracy) {
      report.best_val_accuracy = acc;
      report.best_epoch = epoch;
      report.best_state = deep_copy(model.state());
    }
  }
  restore(model, report.best_state);
  model.set_mode(Mode::eval);
  if (needs_base_mean) model.base_mean = compute_base_mean(model, store, split.train, 100, memo ? &*memo : nullptr);
  return report;
}

// ---- checkpoints -------------------------------------------------------------

namespace {
constexpr const char* kCheckpointKind = "fewshot-checkpoint";
}

void save_checkpoint(const fs::path& path, const FewShotModel& model, const json& metadata) {
  WeightArchive a;
  for (const auto& t : model.state()) a.add(t.name, t.tensor);
  a.metadata = metadata;
  a.metadata["kind"] = kCheckpointKind;
  a.metadata["head"] = std::string(head_name(model.head()));
  a.metadata["image_size"] = model.image_size();
  a.metadata["bdcspn"] = {{"pseudo_count", model.config().bdcspn.pseudo_count},
                          {"temperature", model.config().bdcspn.temperature},
                          {"shift", model.config().bdcspn.shift}};
  if (model.resnet()) {
    a.metadata["resnet_fingerprint"] = fmt::format("{:016x}", model.resnet()->fingerprint());
    a.normalization = model.resnet()->normalization();
  }
  if (model.base_mean) a.add("simpleshot.base_mean", *model.base_mean);
  save_weight_archive(path, a);
}

FewShotModel load_checkpoint(const fs::path& path, std::shared_ptr<const Resnet18Encoder> resnet, json* metadata) {
  const WeightArchive a = load_weight_archive(path);
  if (a.metadata.value("kind", "") != kCheckpointKind) {
    throw FormatError(fmt::format("{} is a weight archive but not a checkpoint", path.string()));
  }
  ModelConfig cfg;
  try {
    cfg.head = parse_head(a.metadata.at("head").get<std::string>());
    cfg.image_size = a.metadata.at("image_size").get<std::size_t>();
    if (a.metadata.contains("bdcspn")) {
      cfg.bdcspn.pseudo_count = a.metadata["bdcspn"].value("pseudo_count", cfg.bdcspn.pseudo_count);
      cfg.bdcspn.temperature = a.metadata["bdcspn"].value("temperature", cfg.bdcspn.temperature);
      cfg.bdcspn.shift = a.metadata["bdcspn"].value("shift", cfg.bdcspn.shift);
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("checkpoint {} has a malformed manifest: {}", path.string(), e.what()));
  } catch (const ContractError& e) {
    throw FormatError(fmt::format("checkpoint {}: {}", path.string(), e.what()));
  }
  if (cfg.head == HeadKind::synergi) {
    if (!resnet) throw FormatError(fmt::format("checkpoint {} is a synergi model and needs --weights", path.string()));
    const std::string want = a.metadata.value("resnet_fingerprint", "");
    const std::string have = fmt::format("{:016x}", resnet->fingerprint());
    if (want != have) {
      throw FormatError(fmt::format("checkpoint {} was trained with ResNet weights {}, got {}", path.string(), want,
                                    have));
    }
  } else {
    resnet.reset();
  }
  FewShotModel model = FewShotModel::create(cfg, std::move(resnet));
  model.load_state(a);
  if (a.contains("simpleshot.base_mean")) model.base_mean = a.get("simpleshot.base_mean").clone();
  model.set_mode(Mode::eval);
  if (metadata) *metadata = a.metadata;
  return model;
}

}  // namespace fsl
