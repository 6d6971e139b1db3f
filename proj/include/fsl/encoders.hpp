#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsl/archive.hpp"
#include "fsl/nn.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// Four conv blocks: [conv3x3/64 pad 0, BN, ReLU, maxpool 2] x2 followed by
// [conv3x3/64 pad 1, BN, ReLU] x2, flattened. BN momentum is 1, so after a
// train-mode forward the running statistics are those of that batch.
class Cnn4Encoder {
 public:
  static constexpr std::size_t kChannels = 64;
  static constexpr std::size_t kMinInput = 16;

  static Cnn4Encoder create(Rng& rng, std::size_t in_channels = 3);

  // [n x c x h x w] -> [n x output_dim(h, w)]. ShapeError below 16x16.
  Tensor forward(const Tensor& batch, GradTape* tape = nullptr);
  static std::size_t output_dim(std::size_t h, std::size_t w);

  void set_mode(Mode mode);
  Mode mode() const { return bn_[0].mode; }

  // Trainable tensors (conv weights/biases, BN gamma/beta).
  std::vector<NamedTensor> parameters() const;
  // parameters() plus BN running statistics.
  std::vector<NamedTensor> state() const;
  // Copies values from `source` (tensors named `prefix` + state() names).
  void load_state(const WeightArchive& source, std::string_view prefix);

 private:
  std::array<Conv2dParams, 4> conv_;
  std::array<BatchNorm2dParams, 4> bn_;
};

struct Resnet18Block {
  Conv2dParams conv1, conv2;
  BatchNorm2dParams bn1, bn2;
  std::optional<std::pair<Conv2dParams, BatchNorm2dParams>> downsample;
};

// relu(bn2(conv2(relu(bn1(conv1 x)))) + shortcut(x)), BN in eval mode.
Tensor basic_block_forward(const Tensor& x, const Resnet18Block& block);

// Tensor names and shapes a ResNet18 archive must provide, in torchvision
// state-dict order (fc and num_batches_tracked excluded).
std::vector<std::pair<std::string, Shape>> resnet18_roster();

// Frozen ResNet18 feature extractor (512-d post global-average-pool). Inputs
// are [0,1] pixels; the archive's normalization is applied internally.
// Parameters never require gradients and BN always uses running statistics.
class Resnet18Encoder {
 public:
  static constexpr std::size_t kFeatureDim = 512;

  // FormatError if a roster tensor is missing or has the wrong shape.
  static std::shared_ptr<const Resnet18Encoder> from_archive(const WeightArchive& archive);
  static std::shared_ptr<const Resnet18Encoder> load(const std::filesystem::path& path);

  Tensor forward(const Tensor& batch) const;

  // Activations after the stem (incl. maxpool), each stage, and the pool.
  struct Stages {
    Tensor stem;
    std::array<Tensor, 4> layers;
    Tensor pooled;
  };
  Stages forward_stages(const Tensor& batch) const;

  const Normalization& normalization() const { return norm_; }
  std::span<const NamedTensor> tensors() const { return tensors_; }
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  Resnet18Encoder() = default;

  Conv2dParams stem_conv_;
  BatchNorm2dParams stem_bn_;
  std::array<std::array<Resnet18Block, 2>, 4> stages_;
  Normalization norm_;
  std::vector<NamedTensor> tensors_;
  std::uint64_t fingerprint_ = 0;
};

// z = [cnn(x) | resnet(x)].
struct HybridEncoder {
  Cnn4Encoder* cnn = nullptr;
  const Resnet18Encoder* resnet = nullptr;

  Tensor embed(const Tensor& batch, GradTape* tape = nullptr) const;
  // Same, with the ResNet half supplied (e.g. memoized features).
  Tensor embed_with_features(const Tensor& batch, const Tensor& resnet_features,
                             GradTape* tape = nullptr) const;
  static std::size_t dim(std::size_t h, std::size_t w) {
    return Cnn4Encoder::output_dim(h, w) + Resnet18Encoder::kFeatureDim;
  }
};

}  // namespace fsl
