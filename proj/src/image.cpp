#include "fsl/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

struct Tap {
  std::size_t lo, hi;
  float w;  // weight of `hi`
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t[i] = Tap{lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
  if (chw.rank() != 3) throw ShapeError("resize_bilinear expects [c x h x w], got " + shape_str(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == out_h && w == out_w) return chw.clone();
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor out({c, out_h, out_w});
  auto o = out.mutable_data();
  const auto in = chw.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = in.data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const float top = plane[a.lo * w + b.lo] * (1 - b.w) + plane[a.lo * w + b.hi] * b.w;
        const float bottom = plane[a.hi * w + b.lo] * (1 - b.w) + plane[a.hi * w + b.hi] * b.w;
        o[(ch * out_h + y) * out_w + x] = top * (1 - a.w) + bottom * a.w;
      }
    }
  }
  return out;
}

Tensor preprocess_bytes(std::span<const std::uint8_t> bytes, std::size_t size, std::string_view source) {
  if (size == 0) throw ShapeError("target image size must be positive");
  cv::Mat raw;
  if (!bytes.empty()) {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    try {
      raw = cv::imdecode(buf, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
      raw.release();
    }
  }
  if (raw.empty()) throw DecodeError(fmt::format("cannot decode image: {}", source));

  const auto h = static_cast<std::size_t>(raw.rows), w = static_cast<std::size_t>(raw.cols);
  Tensor chw({3, h, w});
  auto v = chw.mutable_data();
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = raw.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      // OpenCV hands back BGR.
      for (std::size_t ch = 0; ch < 3; ++ch) {
        v[(ch * h + y) * w + x] = static_cast<float>(row[x][static_cast<int>(2 - ch)]) / 255.0f;
      }
    }
  }
  return resize_bilinear(chw, size, size);
}

Tensor preprocess_file(const std::filesystem::path& path, std::size_t size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot read image: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return preprocess_bytes(bytes, size, path.string());
}

void normalize_channels(Tensor& batch, const Normalization& norm) {
  if (batch.rank() != 4 || batch.dim(1) != 3) {
    throw ShapeError("normalize_channels expects [n x 3 x h x w], got " + shape_str(batch.shape()));
  }
  const std::size_t n = batch.dim(0), plane = batch.dim(2) * batch.dim(3);
  auto v = batch.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = v.data() + (i * 3 + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - norm.mean[c]) / norm.std[c];
    }
  }
}

void write_gray_png(const std::filesystem::path& path, std::span<const float> values, std::size_t height,
                    std::size_t width) {
  if (values.size() != height * width) throw ShapeError("write_gray_png: value count does not match size");
  cv::Mat img(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0f, 1.0f) * 255.0f));
  }
  if (!cv::imwrite(path.string(), img)) throw FormatError("cannot write image: " + path.string());
}

}  // namespace fsl
