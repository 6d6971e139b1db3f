#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsl/episodes.hpp"
#include "fsl/model.hpp"

namespace fsl {

struct TrainConfig {
  double lr0 = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  std::size_t train_tasks = 500;  // per epoch
  std::size_t val_tasks = 100;    // per epoch
  std::vector<std::size_t> milestones{20, 25};
  double gamma = 0.1;
  EpisodeSpec episode;           // episode.seed drives the training episodes
  std::uint64_t val_seed = 1;    // the same validation episodes every epoch

  // ContractError on a non-positive count, a negative rate, or milestones not
  // strictly increasing within [1, epochs].
  void validate() const;
  nlohmann::json to_json() const;
};

// lr0 * gamma^(number of milestones <= epoch); epoch counts from 1.
double multistep_lr(std::size_t epoch, const TrainConfig& cfg);

struct SgdState {
  std::vector<std::vector<float>> velocity;  // one per parameter, lazily sized
};

// g' = g + wd * theta; v = momentum * v + g'; theta -= lr * v. Tensors that
// do not require gradients are frozen and skipped. ContractError when a
// trainable tensor has no gradient.
void sgd_step(std::span<const Tensor> params, SgdState& state, double lr, double momentum, double weight_decay);

struct CheckpointReport {
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1;
  std::vector<double> train_loss;    // mean per epoch
  std::vector<double> val_accuracy;  // per epoch
  std::vector<NamedTensor> best_state;  // deep copy of FewShotModel::state()
};

struct TrainHooks {
  std::function<void(std::size_t epoch, double train_loss, double val_accuracy, double lr)> on_epoch;
};

// Episodic training on split.train with validation on split.validation().
// NumericError (with epoch, task and lr) on a non-finite loss. The model ends
// holding the best snapshot.
CheckpointReport train(const TrainConfig& cfg, const ProtocolSplit& split, FewShotModel& model, ImageStore& store,
                       const TrainHooks& hooks = {});

// Accuracy over the validation episodes (cfg.val_seed), eval mode.
double validation_accuracy(const TrainConfig& cfg, const SplitSide& side, FewShotModel& model, ImageStore& store,
                           ResnetFeatureMemo* memo = nullptr);

// Checkpoint = weight archive of the model state ("cnn." / "relation.") with
// a manifest recording head, input size, training config and metrics.
void save_checkpoint(const std::filesystem::path& path, const FewShotModel& model, const nlohmann::json& metadata);

// FormatError when the file is not a checkpoint, or (synergi) when `resnet`
// is missing or differs from the archive the model was trained with.
FewShotModel load_checkpoint(const std::filesystem::path& path, std::shared_ptr<const Resnet18Encoder> resnet,
                             nlohmann::json* metadata = nullptr);

}  // namespace fsl
