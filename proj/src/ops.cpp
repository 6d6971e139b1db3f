#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

#include "fsl/errors.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw ShapeError(fmt::format("{} expects a rank-{} tensor, got {}", op, rank,
                                 shape_str(t.shape())));
  }
}

// Walks the output of a broadcast binary op, yielding (out, a, b) flat indices.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
  bool same = false;

  template <class F>
  void for_each(F&& f) const {
    const std::size_t n = shape_numel(out);
    if (same) {
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      f(i, ia, ib);
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        ia += a_stride[d];
        ib += b_stride[d];
        if (idx[d] < out[d]) break;
        ia -= a_stride[d] * out[d];
        ib -= b_stride[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    strides[d + offset] = in[d] == 1 ? 0 : stride;
    stride *= in[d];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shapes(a.shape(), b.shape());
  plan.same = a.shape() == b.shape();
  if (!plan.same) {
    plan.a_stride = aligned_strides(a.shape(), plan.out);
    plan.b_stride = aligned_strides(b.shape(), plan.out);
  }
  return plan;
}

// Lanes along one axis: `outer * inner` lanes of `len` elements, `stride` apart.
struct AxisLanes {
  std::size_t outer = 1, len = 1, inner = 1;

  AxisLanes(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
      throw IndexError(fmt::format("axis {} out of range for {}", axis, shape_str(shape)));
    }
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    len = shape[axis];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  }

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) f(o * len * inner + in, inner);
    }
  }
};

void check_labels(std::span<const std::size_t> labels, std::size_t bound, std::string_view op) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= bound) {
      throw IndexError(fmt::format("{}: label {} at position {} outside [0, {})", op, labels[i],
                                   i, bound));
    }
  }
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(fmt::format("shapes {} and {} are not broadcast-compatible", shape_str(a),
                                   shape_str(b)));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, GradTape* tape) {
  const auto plan = plan_broadcast(a, b);
  Tensor out(plan.out);
  auto o = out.mutable_data();
  const auto x = a.data(), y = b.data();
  plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] + y[ib]; });
  if (tracks(tape, {&a, &b})) {
    tape->record("add", out, [a, b, plan](std::span<const float> g) mutable {
      if (a.requires_grad()) {
        std::vector<float> ga(a.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<float> gb(b.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += g[i]; });
        b.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape) {
  const auto plan = plan_broadcast(a, b);
  Tensor out(plan.out);
  auto o = out.mutable_data();
  const auto x = a.data(), y = b.data();
  plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] - y[ib]; });
  if (tracks(tape, {&a, &b})) {
    tape->record("sub", out, [a, b, plan](std::span<const float> g) mutable {
      if (a.requires_grad()) {
        std::vector<float> ga(a.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<float> gb(b.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] -= g[i]; });
        b.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape) {
  const auto plan = plan_broadcast(a, b);
  Tensor out(plan.out);
  auto o = out.mutable_data();
  const auto x = a.data(), y = b.data();
  plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] * y[ib]; });
  if (tracks(tape, {&a, &b})) {
    tape->record("mul", out, [a, b, plan](std::span<const float> g) mutable {
      const auto x = a.data(), y = b.data();
      std::vector<float> ga, gb;
      if (a.requires_grad()) {
        ga.assign(a.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * y[ib]; });
      }
      if (b.requires_grad()) {
        gb.assign(b.numel(), 0.0f);
        plan.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * x[ia]; });
      }
      // Both computed before accumulating so mul(x, x) sees unmodified inputs.
      if (!ga.empty()) a.accumulate_grad(ga);
      if (!gb.empty()) b.accumulate_grad(gb);
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor, GradTape* tape) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * factor;
  if (tracks(tape, {&x})) {
    tape->record("scale", out, [x, factor](std::span<const float> g) mutable {
      std::vector<float> gx(g.begin(), g.end());
      for (auto& v : gx) v *= factor;
      x.accumulate_grad(gx);
    });
  }
  return out;
}

// ---- linear algebra / reductions --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(fmt::format("matmul inner dimensions differ: {} * {}", shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
  Tensor out({m, n});
  MutMap(out.mutable_data().data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  if (tracks(tape, {&a, &b})) {
    tape->record("matmul", out, [a, b, m, k, n](std::span<const float> g) mutable {
      ConstMap dc(g.data(), m, n);
      if (a.requires_grad()) {
        std::vector<float> ga(m * k);
        MutMap(ga.data(), m, k).noalias() = dc * ConstMap(b.data().data(), k, n).transpose();
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<float> gb(k * n);
        MutMap(gb.data(), k, n).noalias() = ConstMap(a.data().data(), m, k).transpose() * dc;
        b.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x, GradTape* tape) {
  require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  MutMap(out.mutable_data().data(), n, m) = ConstMap(x.data().data(), m, n).transpose();
  if (tracks(tape, {&x})) {
    tape->record("transpose", out, [x, m, n](std::span<const float> g) mutable {
      std::vector<float> gx(m * n);
      MutMap(gx.data(), m, n) = ConstMap(g.data(), n, m).transpose();
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor sum(const Tensor& x, GradTape* tape) {
  float total = 0.0f;
  for (float v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tracks(tape, {&x})) {
    tape->record("sum", out, [x](std::span<const float> g) mutable {
      x.accumulate_grad(std::vector<float>(x.numel(), g[0]));
    });
  }
  return out;
}

Tensor mean(const Tensor& x, GradTape* tape) {
  const float n = static_cast<float>(x.numel());
  float total = 0.0f;
  for (float v : x.data()) total += v;
  Tensor out = Tensor::scalar(total / n);
  if (tracks(tape, {&x})) {
    tape->record("mean", out, [x, n](std::span<const float> g) mutable {
      x.accumulate_grad(std::vector<float>(x.numel(), g[0] / n));
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape, GradTape* tape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_str(x.shape()), shape_str(shape)));
  }
  Tensor out(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (tracks(tape, {&x})) {
    tape->record("reshape", out, [x](std::span<const float> g) mutable { x.accumulate_grad(g); });
  }
  return out;
}

// ---- activations / probabilities --------------------------------------------

Tensor relu(const Tensor& x, GradTape* tape) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  // written so that NaN passes through
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] < 0.0f ? 0.0f : in[i];
  if (tracks(tape, {&x})) {
    tape->record("relu", out, [x](std::span<const float> g) mutable {
      const auto in = x.data();
      std::vector<float> gx(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) gx[i] = in[i] > 0.0f ? g[i] : 0.0f;
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x, GradTape* tape) {
  // Clamped to the open interval so saturated scores stay strictly inside (0, 1).
  constexpr float lo = std::numeric_limits<float>::min();
  const float hi = std::nextafter(1.0f, 0.0f);
  Tensor out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float v = in[i];
    const float y = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
    o[i] = std::clamp(y, lo, hi);
  }
  if (tracks(tape, {&x})) {
    tape->record("sigmoid", out, [x, out](std::span<const float> g) mutable {
      const auto y = out.data();
      std::vector<float> gx(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * y[i] * (1.0f - y[i]);
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor softmax(const Tensor& logits, std::size_t axis, GradTape* tape) {
  const AxisLanes lanes(logits.shape(), axis);
  Tensor out(logits.shape());
  auto o = out.mutable_data();
  const auto x = logits.data();
  lanes.for_each([&](std::size_t base, std::size_t stride) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < lanes.len; ++j) mx = std::max(mx, x[base + j * stride]);
    float total = 0.0f;
    for (std::size_t j = 0; j < lanes.len; ++j) {
      const float e = std::exp(x[base + j * stride] - mx);
      o[base + j * stride] = e;
      total += e;
    }
    for (std::size_t j = 0; j < lanes.len; ++j) o[base + j * stride] /= total;
  });
  if (tracks(tape, {&logits})) {
    tape->record("softmax", out, [logits, out, lanes](std::span<const float> g) mutable {
      const auto y = out.data();
      std::vector<float> gx(y.size());
      lanes.for_each([&](std::size_t base, std::size_t stride) {
        float dot = 0.0f;
        for (std::size_t j = 0; j < lanes.len; ++j) dot += g[base + j * stride] * y[base + j * stride];
        for (std::size_t j = 0; j < lanes.len; ++j) {
          const std::size_t i = base + j * stride;
          gx[i] = y[i] * (g[i] - dot);
        }
      });
      logits.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& logits, std::size_t axis, GradTape* tape) {
  const AxisLanes lanes(logits.shape(), axis);
  Tensor out(logits.shape());
  auto o = out.mutable_data();
  const auto x = logits.data();
  lanes.for_each([&](std::size_t base, std::size_t stride) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < lanes.len; ++j) mx = std::max(mx, x[base + j * stride]);
    float total = 0.0f;
    for (std::size_t j = 0; j < lanes.len; ++j) total += std::exp(x[base + j * stride] - mx);
    const float lse = mx + std::log(total);
    for (std::size_t j = 0; j < lanes.len; ++j) o[base + j * stride] = x[base + j * stride] - lse;
  });
  if (tracks(tape, {&logits})) {
    tape->record("log_softmax", out, [logits, out, lanes](std::span<const float> g) mutable {
      const auto y = out.data();
      std::vector<float> gx(y.size());
      lanes.for_each([&](std::size_t base, std::size_t stride) {
        float gsum = 0.0f;
        for (std::size_t j = 0; j < lanes.len; ++j) gsum += g[base + j * stride];
        for (std::size_t j = 0; j < lanes.len; ++j) {
          const std::size_t i = base + j * stride;
          gx[i] = g[i] - std::exp(y[i]) * gsum;
        }
      });
      logits.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels, GradTape* tape) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError(fmt::format("cross_entropy: {} labels for {} rows", labels.size(), n));
  }
  check_labels(labels, c, "cross_entropy");
  const Tensor logp = log_softmax(logits, 1);
  const auto lp = logp.data();
  float total = 0.0f;
  for (std::size_t r = 0; r < n; ++r) total -= lp[r * c + labels[r]];
  Tensor out = Tensor::scalar(total / static_cast<float>(n));
  if (tracks(tape, {&logits})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    tape->record("cross_entropy", out, [logits, logp, lab, n, c](std::span<const float> g) mutable {
      const auto lp = logp.data();
      const float s = g[0] / static_cast<float>(n);
      std::vector<float> gx(n * c);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = std::exp(lp[r * c + j]) * s;
        gx[r * c + lab[r]] -= s;
      }
      logits.accumulate_grad(gx);
    });
  }
  return out;
}

// ---- row-structured ops --------------------------------------------------------

Tensor euclidean_distances(const Tensor& a, const Tensor& b, GradTape* tape) {
  require_rank(a, 2, "euclidean_distances");
  require_rank(b, 2, "euclidean_distances");
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) {
    throw ShapeError(fmt::format("euclidean_distances: feature dims differ ({} vs {})", d, b.dim(1)));
  }
  Tensor out({m, n});
  auto o = out.mutable_data();
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = double(x[i * d + k]) - double(y[j * d + k]);
        acc += diff * diff;
      }
      o[i * n + j] = float(std::sqrt(acc));
    }
  }
  if (tracks(tape, {&a, &b})) {
    tape->record("euclidean_distances", out, [a, b, out, m, n, d](std::span<const float> g) mutable {
      const auto x = a.data(), y = b.data(), dist = out.data();
      std::vector<float> ga(a.requires_grad() ? m * d : 0, 0.0f);
      std::vector<float> gb(b.requires_grad() ? n * d : 0, 0.0f);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const float dij = dist[i * n + j];
          if (dij == 0.0f) continue;
          const float s = g[i * n + j] / dij;
          for (std::size_t k = 0; k < d; ++k) {
            const float v = s * (x[i * d + k] - y[j * d + k]);
            if (!ga.empty()) ga[i * d + k] += v;
            if (!gb.empty()) gb[j * d + k] -= v;
          }
        }
      }
      if (!ga.empty()) a.accumulate_grad(ga);
      if (!gb.empty()) b.accumulate_grad(gb);
    });
  }
  return out;
}

Tensor segment_sum(const Tensor& x, std::span<const std::size_t> labels, std::size_t groups,
                   GradTape* tape) {
  require_rank(x, 2, "segment_sum");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (labels.size() != rows) {
    throw ShapeError(fmt::format("segment_sum: {} labels for {} rows", labels.size(), rows));
  }
  check_labels(labels, groups, "segment_sum");
  Tensor out({groups, d});
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < d; ++k) o[labels[r] * d + k] += in[r * d + k];
  }
  if (tracks(tape, {&x})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    tape->record("segment_sum", out, [x, lab, d](std::span<const float> g) mutable {
      std::vector<float> gx(x.numel());
      for (std::size_t r = 0; r < lab.size(); ++r) {
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] = g[lab[r] * d + k];
      }
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> labels, std::size_t groups,
                    GradTape* tape) {
  require_rank(x, 2, "segment_mean");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (labels.size() != rows) {
    throw ShapeError(fmt::format("segment_mean: {} labels for {} rows", labels.size(), rows));
  }
  check_labels(labels, groups, "segment_mean");
  std::vector<float> count(groups, 0.0f);
  for (auto l : labels) count[l] += 1.0f;
  for (std::size_t c = 0; c < groups; ++c) {
    if (count[c] == 0.0f) throw EpisodeShapeError(fmt::format("segment_mean: group {} is empty", c));
  }
  Tensor out({groups, d});
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < d; ++k) o[labels[r] * d + k] += in[r * d + k];
  }
  for (std::size_t c = 0; c < groups; ++c) {
    for (std::size_t k = 0; k < d; ++k) o[c * d + k] /= count[c];
  }
  if (tracks(tape, {&x})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    tape->record("segment_mean", out, [x, lab, count, d](std::span<const float> g) mutable {
      std::vector<float> gx(x.numel());
      for (std::size_t r = 0; r < lab.size(); ++r) {
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] = g[lab[r] * d + k] / count[lab[r]];
      }
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows, GradTape* tape) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  check_labels(rows, n, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  Tensor out({rows.size(), d});
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                o.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  if (tracks(tape, {&x})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape->record("gather_rows", out, [x, idx, d](std::span<const float> g) mutable {
      std::vector<float> gx(x.numel(), 0.0f);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t k = 0; k < d; ++k) gx[idx[r] * d + k] += g[r * d + k];
      }
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end, GradTape* tape) {
  require_rank(x, 2, "slice_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (begin >= end || end > n) {
    throw IndexError(fmt::format("slice_rows: [{}, {}) invalid for {} rows", begin, end, n));
  }
  const auto in = x.data();
  Tensor out({end - begin, d}, std::vector<float>(in.begin() + static_cast<std::ptrdiff_t>(begin * d),
                                                  in.begin() + static_cast<std::ptrdiff_t>(end * d)));
  if (tracks(tape, {&x})) {
    tape->record("slice_rows", out, [x, begin, d](std::span<const float> g) mutable {
      std::vector<float> gx(x.numel(), 0.0f);
      std::copy(g.begin(), g.end(), gx.begin() + static_cast<std::ptrdiff_t>(begin * d));
      x.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b, GradTape* tape) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError(fmt::format("concat_cols: row counts differ ({} vs {})", n, b.dim(0)));
  }
  Tensor out({n, da + db});
  auto o = out.mutable_data();
  const auto x = a.data(), y = b.data();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * da), da,
                o.begin() + static_cast<std::ptrdiff_t>(r * (da + db)));
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(r * db), db,
                o.begin() + static_cast<std::ptrdiff_t>(r * (da + db) + da));
  }
  if (tracks(tape, {&a, &b})) {
    tape->record("concat_cols", out, [a, b, n, da, db](std::span<const float> g) mutable {
      if (a.requires_grad()) {
        std::vector<float> ga(n * da);
        for (std::size_t r = 0; r < n; ++r) {
          std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(r * (da + db)), da,
                      ga.begin() + static_cast<std::ptrdiff_t>(r * da));
        }
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<float> gb(n * db);
        for (std::size_t r = 0; r < n; ++r) {
          std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(r * (da + db) + da), db,
                      gb.begin() + static_cast<std::ptrdiff_t>(r * db));
        }
        b.accumulate_grad(gb);
      }
    });
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  require_rank(x, 2, "argmax_rows");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const auto v = x.data();
  std::vector<std::size_t> out(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 1; j < c; ++j) {
      if (v[r * c + j] > v[r * c + out[r]]) out[r] = j;
    }
  }
  return out;
}

}  // namespace fsl
