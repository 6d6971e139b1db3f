#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fsl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 tensor.
//
// A Tensor is a reference-counted handle: copies alias the same storage, the
// way parameters and activations are shared between layers and the tape. Use
// clone() for an independent deep copy. Rank-0 tensors are scalars.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float value) { return Tensor(Shape{}, value); }
  static Tensor vector(std::initializer_list<float> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t i) const { return data()[i]; }
  float at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  // Gradient storage belongs to the shared impl, so these work through const
  // handles (e.g. inputs captured by backward closures).
  void accumulate_grad(std::span<const float> delta) const;
  void zero_grad() const;
  void clear_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;

  Impl& impl() const;
  friend class GradTape;
};

// Ordered record of the differentiable operations of one forward pass.
//
// A tape is single-use: once backward() has run, recording or running
// backward again throws StateError until reset() starts a new forward pass.
class GradTape {
 public:
  // Receives d(loss)/d(output) and accumulates into the inputs' gradients.
  using BackwardFn = std::function<void(std::span<const float> grad_output)>;
  using Visitor = std::function<void(std::size_t node_index, std::string_view op)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string_view op, const Tensor& output, BackwardFn fn);

  // Populates .grad() of every tensor that requires gradients and lies on a
  // path to `loss`. `visit` is called once per node, in replay order.
  void backward(const Tensor& loss, const Visitor& visit = {});

  void reset();
  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t i) const { return nodes_.at(i).op; }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    std::string op;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

void backward(const Tensor& loss, GradTape& tape);

// True when an op with these inputs must be recorded on `tape`.
bool tracks(const GradTape* tape, std::initializer_list<const Tensor*> inputs);

// ---- elementwise (trailing-dimension broadcasting) -------------------------

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor scale(const Tensor& x, float factor, GradTape* tape = nullptr);

// ---- linear algebra / reductions --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor transpose(const Tensor& x, GradTape* tape = nullptr);
Tensor sum(const Tensor& x, GradTape* tape = nullptr);
Tensor mean(const Tensor& x, GradTape* tape = nullptr);
Tensor reshape(const Tensor& x, Shape shape, GradTape* tape = nullptr);

// ---- activations / probabilities --------------------------------------------

Tensor relu(const Tensor& x, GradTape* tape = nullptr);
Tensor sigmoid(const Tensor& x, GradTape* tape = nullptr);
Tensor softmax(const Tensor& logits, std::size_t axis = 1, GradTape* tape = nullptr);
Tensor log_softmax(const Tensor& logits, std::size_t axis = 1, GradTape* tape = nullptr);

// Mean over rows of -log_softmax(logits)[row, label]. Rank-0 result.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                     GradTape* tape = nullptr);

// ---- row-structured ops used by the few-shot heads ---------------------------

// [m x d], [n x d] -> [m x n] of L2 distances. The gradient at zero distance
// is taken as zero.
Tensor euclidean_distances(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);

// Rows of x grouped by label (labels in [0, groups)) -> [groups x d].
Tensor segment_sum(const Tensor& x, std::span<const std::size_t> labels, std::size_t groups,
                   GradTape* tape = nullptr);
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> labels, std::size_t groups,
                    GradTape* tape = nullptr);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows, GradTape* tape = nullptr);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end, GradTape* tape = nullptr);
// Rank-2 concatenation along the feature axis.
Tensor concat_cols(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);

// Row-wise argmax of a rank-2 tensor; ties resolve to the lowest column.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace fsl
