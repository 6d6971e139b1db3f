#include "fsl/encoders.hpp"

#include <fmt/format.h>

#include "fsl/errors.hpp"
#include "fsl/image.hpp"

namespace fsl {

namespace {

void check_input(const Tensor& batch, std::size_t channels, std::string_view who) {
  if (batch.rank() != 4 || batch.dim(1) != channels) {
    throw ShapeError(fmt::format("{} expects [n x {} x h x w], got {}", who, channels, shape_str(batch.shape())));
  }
}

void copy_into(Tensor& dst, const Tensor& src, std::string_view name) {
  if (dst.shape() != src.shape()) {
    throw FormatError(fmt::format("tensor '{}' has shape {}, expected {}", name, shape_str(src.shape()),
                                  shape_str(dst.shape())));
  }
  auto d = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), d.begin());
}

}  // namespace

// ---- CNN4 ----------------------------------------------------------------------

Cnn4Encoder Cnn4Encoder::create(Rng& rng, std::size_t in_channels) {
  Cnn4Encoder e;
  for (std::size_t i = 0; i < 4; ++i) {
    e.conv_[i] = make_conv2d(i == 0 ? in_channels : kChannels, kChannels, 3, 1, i < 2 ? 0 : 1, true, rng);
    e.bn_[i] = make_batchnorm2d(kChannels, 1.0f);
  }
  return e;
}

std::size_t Cnn4Encoder::output_dim(std::size_t h, std::size_t w) {
  if (h < kMinInput || w < kMinInput) {
    throw ShapeError(fmt::format("CNN4 needs inputs of at least {0}x{0}, got {1}x{2}", kMinInput, h, w));
  }
  auto trace = [](std::size_t s) { return ((s - 2) / 2 - 2) / 2; };
  return kChannels * trace(h) * trace(w);
}

Tensor Cnn4Encoder::forward(const Tensor& batch, GradTape* tape) {
  check_input(batch, conv_[0].in_channels(), "CNN4");
  output_dim(batch.dim(2), batch.dim(3));
  Tensor h = batch;
  for (std::size_t i = 0; i < 4; ++i) {
    h = relu(batchnorm2d(conv2d(h, conv_[i], tape), bn_[i], tape), tape);
    if (i < 2) h = maxpool2d(h, 2, 2, 0, tape);
  }
  return flatten(h, tape);
}

void Cnn4Encoder::set_mode(Mode mode) {
  for (auto& bn : bn_) bn.mode = mode;
}

std::vector<NamedTensor> Cnn4Encoder::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out.push_back({fmt::format("conv{}.weight", i + 1), conv_[i].weight});
    out.push_back({fmt::format("conv{}.bias", i + 1), conv_[i].bias});
    out.push_back({fmt::format("bn{}.weight", i + 1), bn_[i].gamma});
    out.push_back({fmt::format("bn{}.bias", i + 1), bn_[i].beta});
  }
  return out;
}

std::vector<NamedTensor> Cnn4Encoder::state() const {
  auto out = parameters();
  for (std::size_t i = 0; i < 4; ++i) {
    out.push_back({fmt::format("bn{}.running_mean", i + 1), bn_[i].running_mean});
    out.push_back({fmt::format("bn{}.running_var", i + 1), bn_[i].running_var});
  }
  return out;
}

void Cnn4Encoder::load_state(const WeightArchive& source, std::string_view prefix) {
  for (auto& [name, tensor] : state()) {
    const std::string full = std::string(prefix) + name;
    copy_into(tensor, source.get(full), full);
  }
}

// ---- ResNet18 --------------------------------------------------------------------

namespace {

constexpr std::array<std::size_t, 4> kStageWidth = {64, 128, 256, 512};

void bn_roster(std::vector<std::pair<std::string, Shape>>& r, const std::string& p, std::size_t ch) {
  for (const char* s : {"weight", "bias", "running_mean", "running_var"}) r.emplace_back(p + "." + s, Shape{ch});
}

Tensor eval_bn(const Tensor& x, const BatchNorm2dParams& p) {
  BatchNorm2dParams copy = p;  // shallow; eval mode never writes
  return batchnorm2d(x, copy);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> resnet18_roster() {
  std::vector<std::pair<std::string, Shape>> r;
  r.emplace_back("conv1.weight", Shape{64, 3, 7, 7});
  bn_roster(r, "bn1", 64);
  std::size_t in = 64;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t w = kStageWidth[s];
    for (std::size_t b = 0; b < 2; ++b) {
      const std::string p = fmt::format("layer{}.{}", s + 1, b);
      const std::size_t block_in = b == 0 ? in : w;
      r.emplace_back(p + ".conv1.weight", Shape{w, block_in, 3, 3});
      bn_roster(r, p + ".bn1", w);
      r.emplace_back(p + ".conv2.weight", Shape{w, w, 3, 3});
      bn_roster(r, p + ".bn2", w);
      if (b == 0 && s > 0) {
        r.emplace_back(p + ".downsample.0.weight", Shape{w, block_in, 1, 1});
        bn_roster(r, p + ".downsample.1", w);
      }
    }
    in = w;
  }
  return r;
}

Tensor basic_block_forward(const Tensor& x, const Resnet18Block& block) {
  Tensor h = relu(eval_bn(conv2d(x, block.conv1), block.bn1));
  h = eval_bn(conv2d(h, block.conv2), block.bn2);
  Tensor shortcut = x;
  if (block.downsample) shortcut = eval_bn(conv2d(x, block.downsample->first), block.downsample->second);
  if (shortcut.shape() != h.shape()) {
    throw ShapeError(fmt::format("residual shapes differ: {} vs {}", shape_str(shortcut.shape()), shape_str(h.shape())));
  }
  return relu(add(h, shortcut));
}

std::shared_ptr<const Resnet18Encoder> Resnet18Encoder::from_archive(const WeightArchive& archive) {
  std::shared_ptr<Resnet18Encoder> enc(new Resnet18Encoder());
  for (const auto& [name, shape] : resnet18_roster()) {
    if (!archive.contains(name)) throw FormatError(fmt::format("ResNet18 archive lacks tensor '{}'", name));
    const Tensor& t = archive.get(name);
    if (t.shape() != shape) {
      throw FormatError(fmt::format("ResNet18 tensor '{}' has shape {}, expected {}", name, shape_str(t.shape()),
                                    shape_str(shape)));
    }
    enc->tensors_.push_back({name, t.clone()});
  }
  auto get = [&](const std::string& name) -> Tensor {
    for (const auto& nt : enc->tensors_) {
      if (nt.name == name) return nt.tensor;
    }
    throw FormatError("missing " + name);
  };
  auto bn = [&](const std::string& p) {
    return BatchNorm2dParams{get(p + ".weight"), get(p + ".bias"), get(p + ".running_mean"),
                             get(p + ".running_var"), 0.1f, 1e-5f, Mode::eval};
  };
  enc->stem_conv_ = Conv2dParams{get("conv1.weight"), {}, 2, 3};
  enc->stem_bn_ = bn("bn1");
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < 2; ++b) {
      const std::string p = fmt::format("layer{}.{}", s + 1, b);
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      Resnet18Block& blk = enc->stages_[s][b];
      blk.conv1 = Conv2dParams{get(p + ".conv1.weight"), {}, stride, 1};
      blk.bn1 = bn(p + ".bn1");
      blk.conv2 = Conv2dParams{get(p + ".conv2.weight"), {}, 1, 1};
      blk.bn2 = bn(p + ".bn2");
      if (b == 0 && s > 0) {
        blk.downsample.emplace(Conv2dParams{get(p + ".downsample.0.weight"), {}, 2, 0}, bn(p + ".downsample.1"));
      }
    }
  }
  enc->norm_ = archive.normalization;
  for (float s : enc->norm_.std) {
    if (!(s > 0.0f)) throw FormatError("archive normalization std must be positive");
  }
  enc->fingerprint_ = fingerprint_tensors(enc->tensors_);
  return enc;
}

std::shared_ptr<const Resnet18Encoder> Resnet18Encoder::load(const std::filesystem::path& path) {
  return from_archive(load_weight_archive(path));
}

Resnet18Encoder::Stages Resnet18Encoder::forward_stages(const Tensor& batch) const {
  check_input(batch, 3, "ResNet18");
  Tensor x = batch.clone();
  normalize_channels(x, norm_);
  Stages out;
  out.stem = maxpool2d(relu(eval_bn(conv2d(x, stem_conv_), stem_bn_)), 3, 2, 1);
  Tensor h = out.stem;
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& block : stages_[s]) h = basic_block_forward(h, block);
    out.layers[s] = h;
  }
  out.pooled = global_avg_pool(h);
  return out;
}

Tensor Resnet18Encoder::forward(const Tensor& batch) const { return forward_stages(batch).pooled; }

// ---- hybrid ------------------------------------------------------------------------

Tensor HybridEncoder::embed(const Tensor& batch, GradTape* tape) const {
  if (resnet == nullptr) throw StateError("hybrid encoder has no ResNet18 weights");
  return embed_with_features(batch, resnet->forward(batch), tape);
}

Tensor HybridEncoder::embed_with_features(const Tensor& batch, const Tensor& resnet_features,
                                          GradTape* tape) const {
  if (cnn == nullptr) throw StateError("hybrid encoder has no CNN4");
  if (resnet_features.rank() != 2 || resnet_features.dim(0) != batch.dim(0) ||
      resnet_features.dim(1) != Resnet18Encoder::kFeatureDim) {
    throw ShapeError("ResNet features must be [n x 512], got " + shape_str(resnet_features.shape()));
  }
  return concat_cols(cnn->forward(batch, tape), resnet_features, tape);
}

}  // namespace fsl
