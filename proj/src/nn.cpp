#include "fsl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Upper bound on the im2col buffer, in floats.
constexpr std::size_t kColumnBudget = std::size_t{1} << 23;

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t out_c, k, stride, pad;
  std::size_t oh, ow;

  std::size_t patch() const { return c * k * k; }
  std::size_t out_plane() const { return oh * ow; }
  std::size_t chunk() const {
    return std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, patch() * out_plane()));
  }
};

void require_nchw(const Tensor& x, std::string_view op) {
  if (x.rank() != 4) {
    throw ShapeError(fmt::format("{} expects an [n x c x h x w] tensor, got {}", op,
                                 shape_str(x.shape())));
  }
}

// Columns for images [first, first + count): rows = c*k*k, cols = count*oh*ow.
void im2col(const float* x, const ConvGeometry& g, std::size_t first, std::size_t count,
            float* col) {
  const std::size_t cols = count * g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        float* row = col + ((ch * g.k + kh) * g.k + kw) * cols;
        for (std::size_t img = 0; img < count; ++img) {
          const float* plane = x + ((first + img) * g.c + ch) * g.h * g.w;
          float* dst = row + img * g.out_plane();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill_n(dst + oy * g.ow, g.ow, 0.0f);
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              dst[oy * g.ow + ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                        ? 0.0f
                                        : plane[static_cast<std::size_t>(iy) * g.w +
                                                static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const float* col, const ConvGeometry& g, std::size_t first,
                       std::size_t count, float* dx) {
  const std::size_t cols = count * g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const float* row = col + ((ch * g.k + kh) * g.k + kw) * cols;
        for (std::size_t img = 0; img < count; ++img) {
          float* plane = dx + ((first + img) * g.c + ch) * g.h * g.w;
          const float* src = row + img * g.out_plane();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] +=
                  src[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

Tensor make_trainable(Shape shape, float fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError(fmt::format("input extent {} (padding {}) smaller than window {}", in,
                                 padding, kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p, GradTape* tape) {
  require_nchw(x, "conv2d");
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3)) {
    throw ShapeError("conv2d weight must be [out x in x k x k], got " + shape_str(p.weight.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.weight.dim(0), p.weight.dim(2),
                 p.stride, p.padding, 0, 0};
  if (p.weight.dim(1) != g.c) {
    throw ShapeError(fmt::format("conv2d: input has {} channels, weight expects {}", g.c,
                                 p.weight.dim(1)));
  }
  if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.dim(0) != g.out_c)) {
    throw ShapeError("conv2d bias must be [out_ch], got " + shape_str(p.bias.shape()));
  }
  g.oh = conv_output_extent(g.h, g.k, g.stride, g.pad);
  g.ow = conv_output_extent(g.w, g.k, g.stride, g.pad);

  Tensor out({g.n, g.out_c, g.oh, g.ow});
  auto o = out.mutable_data();
  const float* xin = x.data().data();
  const ConstMap weight(p.weight.data().data(), g.out_c, g.patch());
  const std::size_t chunk = g.chunk();
  std::vector<float> col;
  RowMat prod;
  for (std::size_t first = 0; first < g.n; first += chunk) {
    const std::size_t count = std::min(chunk, g.n - first);
    const std::size_t cols = count * g.out_plane();
    col.resize(g.patch() * cols);
    im2col(xin, g, first, count, col.data());
    prod.noalias() = weight * ConstMap(col.data(), g.patch(), cols);
    for (std::size_t img = 0; img < count; ++img) {
      for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        const float b = p.bias.defined() ? p.bias.data()[oc] : 0.0f;
        const float* src = prod.data() + oc * cols + img * g.out_plane();
        float* dst = o.data() + ((first + img) * g.out_c + oc) * g.out_plane();
        for (std::size_t i = 0; i < g.out_plane(); ++i) dst[i] = src[i] + b;
      }
    }
  }

  const Tensor& weight_t = p.weight;
  const Tensor& bias_t = p.bias;
  if (tracks(tape, {&x, &weight_t, &bias_t})) {
    tape->record("conv2d", out, [x, w = p.weight, b = p.bias, g](std::span<const float> grad) {
      const bool need_x = x.requires_grad();
      const bool need_w = w.requires_grad();
      const bool need_b = b.defined() && b.requires_grad();
      std::vector<float> dx(need_x ? x.numel() : 0, 0.0f);
      RowMat dw = RowMat::Zero(static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
      std::vector<float> db(need_b ? g.out_c : 0, 0.0f);
      const ConstMap weight(w.data().data(), g.out_c, g.patch());
      const std::size_t chunk = g.chunk();
      std::vector<float> col, gmat, dcol;
      for (std::size_t first = 0; first < g.n; first += chunk) {
        const std::size_t count = std::min(chunk, g.n - first);
        const std::size_t cols = count * g.out_plane();
        gmat.resize(g.out_c * cols);
        for (std::size_t img = 0; img < count; ++img) {
          for (std::size_t oc = 0; oc < g.out_c; ++oc) {
            const float* src = grad.data() + ((first + img) * g.out_c + oc) * g.out_plane();
            std::copy_n(src, g.out_plane(), gmat.data() + oc * cols + img * g.out_plane());
          }
        }
        const ConstMap gm(gmat.data(), g.out_c, cols);
        if (need_b) {
          for (std::size_t oc = 0; oc < g.out_c; ++oc) db[oc] += gm.row(static_cast<Eigen::Index>(oc)).sum();
        }
        if (need_w) {
          col.resize(g.patch() * cols);
          im2col(x.data().data(), g, first, count, col.data());
          dw.noalias() += gm * ConstMap(col.data(), g.patch(), cols).transpose();
        }
        if (need_x) {
          dcol.resize(g.patch() * cols);
          MutMap(dcol.data(), g.patch(), cols).noalias() = weight.transpose() * gm;
          col2im_accumulate(dcol.data(), g, first, count, dx.data());
        }
      }
      if (need_x) x.accumulate_grad(dx);
      if (need_w) w.accumulate_grad(std::span<const float>(dw.data(), static_cast<std::size_t>(dw.size())));
      if (need_b) b.accumulate_grad(db);
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& x, BatchNorm2dParams& p, GradTape* tape) {
  require_nchw(x, "batchnorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError(fmt::format("batchnorm2d parameters must be [{}], got {}", c,
                                   shape_str(t->shape())));
    }
  }
  const std::size_t population = n * plane;
  const auto in = x.data();
  std::vector<float> mu(c), invstd(c);

  if (p.mode == Mode::train) {
    if (population < 2) {
      throw DegenerateBatchError(
          fmt::format("batchnorm2d in train mode needs >= 2 values per channel, got {}", population));
    }
    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Statistics accumulate in double; large planes lose digits otherwise.
      double total = 0.0;
      for (std::size_t img = 0; img < n; ++img) {
        const float* src = in.data() + (img * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) total += src[i];
      }
      const double md = total / double(population);
      double sq = 0.0;
      for (std::size_t img = 0; img < n; ++img) {
        const float* src = in.data() + (img * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - md) * (src[i] - md);
      }
      const float m = float(md);
      const float var = float(sq / double(population));
      const float unbiased = float(sq / double(population - 1));
      mu[ch] = m;
      invstd[ch] = 1.0f / std::sqrt(var + p.eps);
      rm[ch] = (1.0f - p.momentum) * rm[ch] + p.momentum * m;
      rv[ch] = (1.0f - p.momentum) * rv[ch] + p.momentum * unbiased;
    }
  } else {
    const auto rm = p.running_mean.data();
    const auto rv = p.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      invstd[ch] = 1.0f / std::sqrt(rv[ch] + p.eps);
    }
  }

  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto gamma = p.gamma.data(), beta = p.beta.data();
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (img * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        o[base + i] = gamma[ch] * ((in[base + i] - mu[ch]) * invstd[ch]) + beta[ch];
      }
    }
  }

  if (tracks(tape, {&x, &p.gamma, &p.beta})) {
    const bool batch_stats = p.mode == Mode::train;
    tape->record("batchnorm2d", out, [x, gamma_t = p.gamma, beta_t = p.beta, mu, invstd, n, c, plane,
                                      batch_stats](std::span<const float> g) {
      const auto in = x.data();
      const auto gamma = gamma_t.data();
      const float m = static_cast<float>(n * plane);
      std::vector<float> dgamma(c, 0.0f), dbeta(c, 0.0f);
      for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (img * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const float xhat = (in[base + i] - mu[ch]) * invstd[ch];
            dbeta[ch] += g[base + i];
            dgamma[ch] += g[base + i] * xhat;
          }
        }
      }
      if (x.requires_grad()) {
        std::vector<float> dx(x.numel());
        for (std::size_t img = 0; img < n; ++img) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (img * c + ch) * plane;
            const float k = gamma[ch] * invstd[ch];
            for (std::size_t i = 0; i < plane; ++i) {
              if (batch_stats) {
                const float xhat = (in[base + i] - mu[ch]) * invstd[ch];
                dx[base + i] = k * (g[base + i] - dbeta[ch] / m - xhat * dgamma[ch] / m);
              } else {
                dx[base + i] = k * g[base + i];
              }
            }
          }
        }
        x.accumulate_grad(dx);
      }
      if (gamma_t.requires_grad()) gamma_t.accumulate_grad(dgamma);
      if (beta_t.requires_grad()) beta_t.accumulate_grad(dbeta);
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding,
                 GradTape* tape) {
  require_nchw(x, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel - std::min(kernel, 2 * padding) || w < kernel - std::min(kernel, 2 * padding) ||
      h < 2 || w < 2) {
    throw ShapeError("maxpool2d input too small: " + shape_str(x.shape()));
  }
  const std::size_t oh = conv_output_extent(h, kernel, stride, padding);
  const std::size_t ow = conv_output_extent(w, kernel, stride, padding);
  Tensor out({n, c, oh, ow});
  auto o = out.mutable_data();
  const auto in = x.data();
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = in.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            // NaN wins so it propagates instead of vanishing.
            if (best_idx == std::numeric_limits<std::size_t>::max() || src[idx] > best ||
                (std::isnan(src[idx]) && !std::isnan(best))) {
              best = src[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t oi = plane * oh * ow + oy * ow + ox;
        o[oi] = best;
        argmax[oi] = plane * h * w + best_idx;
      }
    }
  }
  if (tracks(tape, {&x})) {
    tape->record("maxpool2d", out, [x, argmax](std::span<const float> g) {
      std::vector<float> dx(x.numel(), 0.0f);
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[i];
      x.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x, GradTape* tape) {
  require_nchw(x, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    float total = 0.0f;
    for (std::size_t j = 0; j < plane; ++j) total += in[i * plane + j];
    o[i] = total / static_cast<float>(plane);
  }
  if (tracks(tape, {&x})) {
    tape->record("global_avg_pool", out, [x, plane](std::span<const float> g) {
      std::vector<float> dx(x.numel());
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::fill_n(dx.begin() + static_cast<std::ptrdiff_t>(i * plane), plane,
                    g[i] / static_cast<float>(plane));
      }
      x.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor flatten(const Tensor& x, GradTape* tape) {
  if (x.rank() < 2) throw ShapeError("flatten needs a batch axis, got " + shape_str(x.shape()));
  return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)}, tape);
}

Tensor linear(const Tensor& x, const LinearParams& p, GradTape* tape) {
  if (x.rank() != 2 || p.weight.rank() != 2 || p.bias.rank() != 1) {
    throw ShapeError("linear expects x [n x in], W [out x in], b [out]");
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(0);
  if (p.weight.dim(1) != in || p.bias.dim(0) != out_dim) {
    throw ShapeError(fmt::format("linear: x {} incompatible with W {} / b {}", shape_str(x.shape()),
                                 shape_str(p.weight.shape()), shape_str(p.bias.shape())));
  }
  Tensor out({n, out_dim});
  MutMap y(out.mutable_data().data(), n, out_dim);
  y.noalias() = ConstMap(x.data().data(), n, in) * ConstMap(p.weight.data().data(), out_dim, in).transpose();
  const auto b = p.bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < out_dim; ++j) y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) += b[j];
  }
  if (tracks(tape, {&x, &p.weight, &p.bias})) {
    tape->record("linear", out, [x, w = p.weight, b = p.bias, n, in, out_dim](std::span<const float> g) {
      const ConstMap gy(g.data(), n, out_dim);
      if (x.requires_grad()) {
        std::vector<float> dx(n * in);
        MutMap(dx.data(), n, in).noalias() = gy * ConstMap(w.data().data(), out_dim, in);
        x.accumulate_grad(dx);
      }
      if (w.requires_grad()) {
        std::vector<float> dw(out_dim * in);
        MutMap(dw.data(), out_dim, in).noalias() = gy.transpose() * ConstMap(x.data().data(), n, in);
        w.accumulate_grad(dw);
      }
      if (b.requires_grad()) {
        std::vector<float> db(out_dim);
        for (std::size_t j = 0; j < out_dim; ++j) db[j] = gy.col(static_cast<Eigen::Index>(j)).sum();
        b.accumulate_grad(db);
      }
    });
  }
  return out;
}

Conv2dParams make_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                         std::size_t stride, std::size_t padding, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
  Tensor weight = make_trainable({out_ch, in_ch, kernel, kernel}, 0.0f);
  for (auto& v : weight.mutable_data()) v = static_cast<float>(rng.uniform(-bound, bound));
  Conv2dParams p{weight, {}, stride, padding};
  if (with_bias) p.bias = make_trainable({out_ch}, 0.0f);
  return p;
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor weight = make_trainable({out, in}, 0.0f);
  for (auto& v : weight.mutable_data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return LinearParams{weight, make_trainable({out}, 0.0f)};
}

BatchNorm2dParams make_batchnorm2d(std::size_t channels, float momentum, float eps) {
  return BatchNorm2dParams{make_trainable({channels}, 1.0f), make_trainable({channels}, 0.0f),
                           Tensor::zeros({channels}), Tensor::ones({channels}), momentum, eps,
                           Mode::train};
}

}  // namespace fsl
