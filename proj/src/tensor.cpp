#include "fsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fsl/errors.hpp"

namespace fsl {

struct Tensor::Impl {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // empty == absent
  bool requires_grad = false;
  bool leaf = true;
};

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<Impl>()) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_->values.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<Impl>()) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_str(shape),
                                 shape_numel(shape), values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor(Shape{values.size()}, std::vector<float>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<float> values;
  values.reserve(n * m);
  for (const auto& row : rows) {
    if (row.size() != m) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{n, m}, std::move(values));
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw StateError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw IndexError(fmt::format("axis {} out of range for shape {}", axis, shape_str(s)));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().values.size(); }

std::span<const float> Tensor::data() const { return impl().values; }
std::span<float> Tensor::mutable_data() { return impl().values; }

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_str(shape()));
  return impl().values[0];
}

float Tensor::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2) throw ShapeError("at(row, col) requires a rank-2 tensor");
  return impl().values[row * s[1] + col];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const float> Tensor::grad() const { return impl().grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return Tensor(shape(), impl().grad);
}

void Tensor::accumulate_grad(std::span<const float> delta) const {
  auto& self = impl();
  if (delta.size() != self.values.size()) {
    throw ShapeError(fmt::format("gradient of size {} for tensor {}", delta.size(),
                                 shape_str(self.shape)));
  }
  if (self.grad.empty()) {
    self.grad.assign(delta.begin(), delta.end());
  } else {
    for (std::size_t i = 0; i < delta.size(); ++i) self.grad[i] += delta[i];
  }
}

void Tensor::zero_grad() const {
  auto& self = impl();
  self.grad.assign(self.values.size(), 0.0f);
}

void Tensor::clear_grad() const {
  auto& self = impl();
  self.grad.clear();
  self.grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->values);
}

// ---- GradTape ----------------------------------------------------------------

void GradTape::record(std::string_view op, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw StateError("tape already replayed; reset() before a new forward pass");
  auto& out = output.impl();
  out.requires_grad = true;
  out.leaf = false;
  nodes_.push_back(Node{std::string(op), output, std::move(fn)});
}

void GradTape::backward(const Tensor& loss, const Visitor& visit) {
  if (consumed_) throw StateError("backward already ran on this tape");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) {
    return n.output.same_storage(loss);
  });
  if (!on_tape) throw ContractError("loss was not produced on this tape");

  consumed_ = true;
  Tensor seed = loss;
  seed.clear_grad();
  seed.accumulate_grad(std::vector<float>{1.0f});

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    auto& out = node.output.impl();
    if (out.grad.empty()) continue;
    if (visit) visit(i, node.op);
    node.fn(out.grad);
    // Intermediate gradients are not retained once propagated.
    if (!out.leaf && !node.output.same_storage(loss)) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
}

void GradTape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void backward(const Tensor& loss, GradTape& tape) { tape.backward(loss); }

bool tracks(const GradTape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

}  // namespace fsl
