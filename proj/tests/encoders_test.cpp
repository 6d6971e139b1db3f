#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "fsl/encoders.hpp"
#include "fsl/errors.hpp"
#include "support/fixture.hpp"
#include "support/gradcheck.hpp"

using namespace fsl;
using testkit::random_tensor;

namespace {

std::shared_ptr<const Resnet18Encoder> fixture_resnet() {
  static auto enc = Resnet18Encoder::load(testkit::load_resnet_fixture().archive);
  return enc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.at(i)) - b.at(i)));
  return m;
}

double total(const Tensor& t) {
  double s = 0;
  for (float v : t.data()) s += v;
  return s;
}

}  // namespace

TEST(Cnn4, OutputDimsFollowLayerFormulas) {
  EXPECT_EQ(Cnn4Encoder::output_dim(84, 84), 23104u);
  EXPECT_EQ(Cnn4Encoder::output_dim(32, 32), 2304u);
  EXPECT_EQ(Cnn4Encoder::output_dim(16, 16), 64u * 2 * 2);
  EXPECT_THROW(Cnn4Encoder::output_dim(15, 32), ShapeError);

  Rng rng(1);
  Cnn4Encoder cnn = Cnn4Encoder::create(rng);
  Tensor out = cnn.forward(random_tensor({2, 3, 32, 32}, 2, 0, 1));
  EXPECT_EQ(out.shape(), (Shape{2, 2304}));
  EXPECT_THROW(cnn.forward(Tensor({2, 3, 12, 12})), ShapeError);
  EXPECT_THROW(cnn.forward(Tensor({2, 1, 32, 32})), ShapeError);
}

TEST(Cnn4, EightyFourPixelTrace) {
  Rng rng(3);
  Cnn4Encoder cnn = Cnn4Encoder::create(rng);
  cnn.set_mode(Mode::eval);
  EXPECT_EQ(cnn.forward(random_tensor({1, 3, 84, 84}, 4, 0, 1)).shape(), (Shape{1, 23104}));
}

TEST(Cnn4, IdenticalImagesGiveIdenticalRowsInEvalMode) {
  Rng rng(5);
  Cnn4Encoder cnn = Cnn4Encoder::create(rng);
  cnn.forward(random_tensor({4, 3, 32, 32}, 6, 0, 1));  // populate running stats
  cnn.set_mode(Mode::eval);
  Tensor one = random_tensor({1, 3, 32, 32}, 7, 0, 1);
  Tensor two({2, 3, 32, 32});
  auto v = two.mutable_data();
  std::copy(one.data().begin(), one.data().end(), v.begin());
  std::copy(one.data().begin(), one.data().end(), v.begin() + static_cast<std::ptrdiff_t>(one.numel()));
  Tensor out = cnn.forward(two);
  for (std::size_t j = 0; j < out.dim(1); ++j) EXPECT_EQ(out.at(0, j), out.at(1, j));
  Tensor again = cnn.forward(two);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), again.at(i));
}

TEST(Cnn4, StateRoundTripThroughArchive) {
  Rng a(8), b(9);
  Cnn4Encoder src = Cnn4Encoder::create(a), dst = Cnn4Encoder::create(b);
  src.forward(random_tensor({3, 3, 16, 16}, 10, 0, 1));
  WeightArchive ar;
  for (const auto& [name, t] : src.state()) ar.add("cnn." + name, t.clone());
  dst.load_state(ar, "cnn.");
  src.set_mode(Mode::eval);
  dst.set_mode(Mode::eval);
  Tensor x = random_tensor({2, 3, 16, 16}, 11, 0, 1);
  Tensor ya = src.forward(x), yb = dst.forward(x);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya.at(i), yb.at(i));
  EXPECT_EQ(src.parameters().size(), 16u);
  EXPECT_EQ(src.state().size(), 24u);
}

TEST(Resnet18, BasicBlockWithZeroConvsIsRelu) {
  auto bn = [] {
    BatchNorm2dParams p = make_batchnorm2d(4, 0.1f);
    p.mode = Mode::eval;
    return p;
  };
  Resnet18Block block{Conv2dParams{Tensor({4, 4, 3, 3}), {}, 1, 1}, Conv2dParams{Tensor({4, 4, 3, 3}), {}, 1, 1},
                      bn(), bn(), std::nullopt};
  Tensor x = random_tensor({2, 4, 5, 5}, 12);
  Tensor y = basic_block_forward(x, block);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), std::max(0.0f, x.at(i)));
}

TEST(Resnet18, ArchiveRosterIsComplete) {
  const auto archive = load_weight_archive(testkit::load_resnet_fixture().archive);
  const auto roster = resnet18_roster();
  // stem conv + BN(4), 8 blocks x (2 conv + 2 BN x 4), 3 downsample x (conv + BN(4))
  EXPECT_EQ(roster.size(), 5u + 8u * 10u + 3u * 5u);
  ASSERT_EQ(archive.tensors.size(), roster.size());
  for (std::size_t i = 0; i < roster.size(); ++i) {
    EXPECT_EQ(archive.tensors[i].name, roster[i].first);
    EXPECT_EQ(archive.tensors[i].tensor.shape(), roster[i].second);
  }
  std::size_t params = 0;
  for (const auto& t : archive.tensors) params += t.tensor.numel();
  EXPECT_EQ(archive.payload_bytes(), params * 4);
  // torchvision resnet18 minus fc (512*1000 + 1000), plus BN running stats.
  EXPECT_EQ(params, 11689512u - 513000u + 2u * 4800u);
}

TEST(Resnet18, MissingTensorRejected) {
  auto archive = load_weight_archive(testkit::load_resnet_fixture().archive);
  archive.tensors.erase(archive.tensors.begin() + 7);
  EXPECT_THROW(Resnet18Encoder::from_archive(archive), FormatError);
}

TEST(Resnet18, MatchesExporterFixture) {
  const auto fx = testkit::load_resnet_fixture();
  const auto stages = fixture_resnet()->forward_stages(fx.input);
  EXPECT_EQ(stages.pooled.shape(), (Shape{1, 512}));
  EXPECT_LE(max_abs_diff(stages.pooled, fx.output), 1e-4);
  // Stage sums localize a divergence; relative agreement is plenty.
  EXPECT_NEAR(total(stages.stem), fx.stage_sums.at("stem"), 1e-4 * std::abs(fx.stage_sums.at("stem")));
  for (int s = 0; s < 4; ++s) {
    const double want = fx.stage_sums.at("layer" + std::to_string(s + 1));
    EXPECT_NEAR(total(stages.layers[s]), want, 1e-4 * std::abs(want)) << "layer" << s + 1;
  }
}

TEST(Resnet18, ZeroInputIsFiniteAndDeterministic) {
  Tensor zeros({2, 3, 32, 32});
  Tensor a = fixture_resnet()->forward(zeros), b = fixture_resnet()->forward(zeros);
  ASSERT_EQ(a.shape(), (Shape{2, 512}));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_TRUE(std::isfinite(a.at(i)));
    EXPECT_EQ(a.at(i), b.at(i));
  }
  for (const auto& t : fixture_resnet()->tensors()) EXPECT_FALSE(t.tensor.requires_grad());
}

TEST(Hybrid, ConcatenatesCnnThenResnet) {
  Rng rng(13);
  Cnn4Encoder cnn = Cnn4Encoder::create(rng);
  cnn.set_mode(Mode::eval);
  HybridEncoder hybrid{&cnn, fixture_resnet().get()};
  EXPECT_EQ(HybridEncoder::dim(84, 84), 23616u);
  Tensor x = random_tensor({3, 3, 32, 32}, 14, 0, 1);
  Tensor z = hybrid.embed(x);
  const std::size_t d = Cnn4Encoder::output_dim(32, 32);
  ASSERT_EQ(z.shape(), (Shape{3, d + 512}));
  Tensor c = cnn.forward(x), r = fixture_resnet()->forward(x);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(z.at(i, j), c.at(i, j));
    for (std::size_t j = 0; j < 512; ++j) EXPECT_EQ(z.at(i, d + j), r.at(i, j));
  }
}

TEST(Hybrid, GradientsReachCnnButNotResnet) {
  Rng rng(15);
  Cnn4Encoder cnn = Cnn4Encoder::create(rng);
  HybridEncoder hybrid{&cnn, fixture_resnet().get()};
  GradTape tape;
  Tensor z = hybrid.embed(random_tensor({4, 3, 32, 32}, 16, 0, 1), &tape);
  backward(mean(mul(z, z, &tape), &tape), tape);
  bool nonzero = false;
  for (const auto& [name, t] : cnn.parameters()) {
    ASSERT_TRUE(t.has_grad()) << name;
    for (float g : t.grad()) nonzero = nonzero || g != 0.0f;
  }
  EXPECT_TRUE(nonzero);
  for (const auto& t : fixture_resnet()->tensors()) EXPECT_FALSE(t.tensor.has_grad()) << t.name;
}
