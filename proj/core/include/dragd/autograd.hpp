#pragma once

// Reverse-mode automatic differentiation over a closed set of tensor
// primitives. Every backward rule is itself written in terms of recorded
// primitives, so a gradient computed with create_graph=true can be
// differentiated again (reverse-over-reverse).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dragd/tensor.hpp"

namespace dragd::ag {

class Op;
struct Node;

/// Handle to a value in the computation graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const noexcept;

  /// Same value, cut from the graph.
  Var detach() const;

  const Node* node() const noexcept { return node_.get(); }

 private:
  friend Var apply(std::shared_ptr<const Op> op, std::vector<Var> inputs);
  friend struct Node;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  std::shared_ptr<const Tensor> value;
  std::vector<Var> inputs;
  std::shared_ptr<const Op> op;  // null for leaves and constants
  bool requires_grad = false;
};

/// A differentiable primitive.
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) const = 0;
  /// Vector-Jacobian product. Returns one entry per input; entries for
  /// inputs with needs[i] == false may be left undefined, and an undefined
  /// entry for a needed input means a zero gradient.
  virtual std::vector<Var> backward(std::span<const Var> inputs, const Var& output, const Var& grad_out,
                                    std::span<const bool> needs) const = 0;
};

/// Evaluates op on inputs and records the node when any input requires grad.
Var apply(std::shared_ptr<const Op> op, std::vector<Var> inputs);

/// Gradients of scalar `root` with respect to each of `wrt`. Inputs with no
/// path from root receive zeros. With create_graph the returned gradients
/// are themselves recorded and can be differentiated.
std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph = false);

// ---------------------------------------------------------------------------
// Primitives

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var square(const Var& a);
/// a * x + b, elementwise with scalar constants.
Var affine(const Var& x, double a, double b = 0.0);
Var rsqrt(const Var& x);
/// Sum of all entries, returned as a scalar.
Var sum(const Var& x);
/// Scalar broadcast to `shape`.
Var broadcast(const Var& scalar, Shape shape);
Var reshape(const Var& x, Shape shape);

/// op(a) * op(b) for rank-2 operands, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// x: (N, C, H, W), w: (O, C, KH, KW) -> (N, O, OH, OW), zero padding.
Var conv2d(const Var& x, const Var& w, Conv2dGeometry geo);
/// Adjoint of conv2d in its input: dy (N, O, OH, OW), w -> (N, C, H, W).
Var conv2d_input_grad(const Var& dy, const Var& w, Conv2dGeometry geo, Shape input_shape);
/// Adjoint of conv2d in its weight: x, dy -> (O, C, KH, KW).
Var conv2d_weight_grad(const Var& x, const Var& dy, Conv2dGeometry geo, Shape weight_shape);

/// Adds b (C) along axis 1 of x (N, C, ...).
Var bias_add(const Var& x, const Var& b);
/// Sums x (N, C, ...) over every axis except 1.
Var bias_reduce(const Var& x);

Var sigmoid(const Var& x);
Var relu(const Var& x);
/// dy * [x > 0]. The mask has zero derivative everywhere, including at 0.
Var relu_mask(const Var& dy, const Var& x);

/// Non-overlapping k x k average pooling on (N, C, H, W).
Var avg_pool(const Var& x, std::size_t k);
Var avg_pool_grad(const Var& dy, std::size_t k, Shape input_shape);
/// Non-overlapping k x k max pooling; ties resolve to the first maximum.
Var max_pool(const Var& x, std::size_t k);

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;
/// out[i] = x[index[i]], out has `shape`.
Var gather(const Var& x, IndexList index, Shape shape);
/// out = zeros(shape); out[index[i]] += g[i].
Var scatter(const Var& g, IndexList index, Shape shape);

/// Row-wise softmax of (N, C).
Var softmax(const Var& logits);
/// Mean over rows of -sum_c targets * log softmax(logits). Targets are (N, C)
/// probability rows.
Var softmax_cross_entropy(const Var& logits, const Var& targets);
/// d(softmax_cross_entropy)/d(logits) scaled by scalar upstream g:
/// g * (softmax(logits) - targets) / N.
Var softmax_cross_entropy_grad(const Var& logits, const Var& targets, const Var& g);

// ---------------------------------------------------------------------------
// Recording

/// Topologically ordered snapshot of the graph below a root.
struct ComputationRecord {
  struct Entry {
    std::shared_ptr<const Op> op;  // null for leaves
    std::vector<std::size_t> inputs;
    std::shared_ptr<const Tensor> value;
    std::string name() const;
  };
  std::vector<Entry> nodes;  // root is last
};

ComputationRecord trace(const Var& root);

/// Re-evaluates every recorded op in order from the stored leaf values and
/// returns the root value.
Tensor replay(const ComputationRecord& record);

}  // namespace dragd::ag
