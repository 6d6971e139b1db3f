#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

enum class Mode { train, eval };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Conv2dParams {
  Tensor weight;  // [out_ch x in_ch x kh x kw]
  Tensor bias;    // [out_ch], or undefined for bias-free convolutions
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

struct BatchNorm2dParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
  Mode mode = Mode::train;
};

struct LinearParams {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

// Output extent of a convolution / pooling window along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

// Cross-correlation (no kernel flip). x: [n x c x h x w].
Tensor conv2d(const Tensor& x, const Conv2dParams& p, GradTape* tape = nullptr);

// Train mode normalizes with batch statistics and folds them into the running
// statistics: running = (1 - momentum) * running + momentum * batch, where the
// variance fed to running_var is the unbiased batch variance. Eval mode
// normalizes with the running statistics.
Tensor batchnorm2d(const Tensor& x, BatchNorm2dParams& p, GradTape* tape = nullptr);

// Window max; padding cells never win and a NaN always does. Backward routes
// to the first (row-major) maximum of each window.
Tensor maxpool2d(const Tensor& x, std::size_t kernel = 2, std::size_t stride = 2,
                 std::size_t padding = 0, GradTape* tape = nullptr);

// [n x c x h x w] -> [n x c]
Tensor global_avg_pool(const Tensor& x, GradTape* tape = nullptr);

// [n x ...] -> [n x prod(...)]
Tensor flatten(const Tensor& x, GradTape* tape = nullptr);

// x * W^T + b
Tensor linear(const Tensor& x, const LinearParams& p, GradTape* tape = nullptr);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero; trainable.
Conv2dParams make_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                         std::size_t stride, std::size_t padding, bool with_bias, Rng& rng);
LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng);
// gamma = 1, beta = 0 (trainable); running mean 0, running var 1.
BatchNorm2dParams make_batchnorm2d(std::size_t channels, float momentum, float eps = 1e-5f);

}  // namespace fsl
