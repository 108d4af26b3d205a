#include "dragd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <utility>

#include "dragd/error.hpp"
#include "kernels.hpp"

namespace dragd::ag {

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::make_shared<const Tensor>(std::move(value));
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw Error("access to an undefined Var");
  return *node_->value;
}

bool Var::requires_grad() const noexcept { return node_ && node_->requires_grad; }

Var Var::detach() const {
  auto n = std::make_shared<Node>();
  n->value = node_->value;
  return Var(std::move(n));
}

Var apply(std::shared_ptr<const Op> op, std::vector<Var> inputs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  bool needs_grad = false;
  for (const Var& v : inputs) {
    values.push_back(&v.value());
    needs_grad = needs_grad || v.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::make_shared<const Tensor>(op->forward(values));
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->inputs = std::move(inputs);
    node->op = std::move(op);
  }
  return Var(std::move(node));
}

namespace {

// Post-order DFS over nodes that require grad (inputs precede users).
std::vector<const Node*> topo_order(const Node* root, bool grad_only) {
  std::vector<const Node*> order;
  std::unordered_map<const Node*, bool> seen;
  std::vector<std::pair<const Node*, std::size_t>> stack{{root, 0}};
  seen[root] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].node();
      if ((!grad_only || child->requires_grad) && !seen[child]) {
        seen[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  if (root.value().numel() != 1) {
    throw ShapeError("grad() needs a scalar root, got shape " + shape_str(root.shape()));
  }
  std::vector<Var> result(wrt.size());
  auto zeros_for = [&](std::size_t i) { return Var(Tensor(wrt[i].shape())); };
  if (!root.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = zeros_for(i);
    return result;
  }

  const std::vector<const Node*> order = topo_order(root.node(), true);
  std::unordered_map<const Node*, std::size_t> index;
  for (std::size_t i = 0; i < order.size(); ++i) index[order[i]] = i;

  std::vector<char> wanted(order.size(), 0);
  for (const Var& w : wrt) {
    if (auto it = index.find(w.node()); it != index.end()) wanted[it->second] = 1;
  }
  // needed[i]: some requested input is reachable from node i.
  std::vector<char> needed(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    needed[i] = wanted[i];
    for (const Var& in : order[i]->inputs) {
      if (auto it = index.find(in.node()); it != index.end() && needed[it->second]) needed[i] = 1;
    }
  }

  // Nodes are only reachable as raw pointers here; rebuild owning Vars by
  // walking from the root so that backward rules can reference outputs.
  std::vector<Var> handles(order.size());
  handles[index.at(root.node())] = root;
  for (std::size_t i = order.size(); i-- > 0;) {
    for (const Var& in : order[i]->inputs) {
      if (auto it = index.find(in.node()); it != index.end() && !handles[it->second].defined()) {
        handles[it->second] = in;
      }
    }
  }

  std::vector<Var> grads(order.size());
  grads[index.at(root.node())] = Var(Tensor(root.shape(), 1.0));

  for (std::size_t i = order.size(); i-- > 0;) {
    const Node* node = order[i];
    if (!node->op || !needed[i] || !grads[i].defined()) continue;
    std::vector<Var> inputs;
    std::vector<bool> needs_flags;
    inputs.reserve(node->inputs.size());
    for (const Var& in : node->inputs) {
      inputs.push_back(create_graph ? in : in.detach());
      auto it = index.find(in.node());
      needs_flags.push_back(it != index.end() && needed[it->second]);
    }
    const Var output = create_graph ? handles[i] : handles[i].detach();
    const Var g = create_graph ? grads[i] : grads[i].detach();
    std::unique_ptr<bool[]> flags(new bool[needs_flags.size()]);
    std::copy(needs_flags.begin(), needs_flags.end(), flags.get());
    std::vector<Var> in_grads =
        node->op->backward(inputs, output, g, std::span<const bool>(flags.get(), needs_flags.size()));
    for (std::size_t k = 0; k < node->inputs.size(); ++k) {
      if (!needs_flags[k] || k >= in_grads.size() || !in_grads[k].defined()) continue;
      const std::size_t j = index.at(node->inputs[k].node());
      if (in_grads[k].shape() != node->inputs[k].shape()) {
        throw ShapeError(std::string("backward of ") + std::string(node->op->name()) + " produced gradient " +
                         shape_str(in_grads[k].shape()) + " for input " + shape_str(node->inputs[k].shape()));
      }
      grads[j] = grads[j].defined() ? add(grads[j], in_grads[k]) : in_grads[k];
    }
    // Free intermediate gradients that are no longer needed.
    if (!wanted[i]) grads[i] = Var();
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto it = index.find(wrt[i].node());
    if (it != index.end() && grads[it->second].defined()) {
      result[i] = create_graph ? grads[it->second] : grads[it->second].detach();
    } else {
      result[i] = zeros_for(i);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, std::string_view op, F f) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class F>
Tensor map1(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

// Ops that only ever appear inside a second backward pass. Differentiating
// them a third time is not supported.
class TerminalOp : public Op {
 public:
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var&, std::span<const bool>) const override {
    throw Error(std::string(name()) + " does not support another level of differentiation");
  }
};

class AddOp final : public Op {
 public:
  std::string_view name() const override { return "add"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map2(*in[0], *in[1], name(), [](double a, double b) { return a + b; });
  }
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var& g, std::span<const bool>) const override {
    return {g, g};
  }
};

class SubOp final : public Op {
 public:
  std::string_view name() const override { return "sub"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map2(*in[0], *in[1], name(), [](double a, double b) { return a - b; });
  }
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {g, needs[1] ? affine(g, -1.0) : Var()};
  }
};

class MulOp final : public Op {
 public:
  std::string_view name() const override { return "mul"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map2(*in[0], *in[1], name(), [](double a, double b) { return a * b; });
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? mul(g, in[1]) : Var(), needs[1] ? mul(g, in[0]) : Var()};
  }
};

class SquareOp final : public Op {
 public:
  std::string_view name() const override { return "square"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map1(*in[0], [](double a) { return a * a; });
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {mul(g, affine(in[0], 2.0))};
  }
};

class AffineOp final : public Op {
 public:
  AffineOp(double a, double b) : a_(a), b_(b) {}
  std::string_view name() const override { return "affine"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map1(*in[0], [this](double x) { return a_ * x + b_; });
  }
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var& g, std::span<const bool>) const override {
    return {affine(g, a_)};
  }

 private:
  double a_, b_;
};

class RsqrtOp final : public Op {
 public:
  std::string_view name() const override { return "rsqrt"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map1(*in[0], [](double x) { return 1.0 / std::sqrt(x); });
  }
  std::vector<Var> backward(std::span<const Var>, const Var& y, const Var& g, std::span<const bool>) const override {
    return {mul(g, affine(mul(y, square(y)), -0.5))};
  }
};

class SumOp final : public Op {
 public:
  std::string_view name() const override { return "sum"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    double acc = 0.0;
    for (double v : in[0]->data()) acc += v;
    return Tensor::scalar(acc);
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {broadcast(g, in[0].shape())};
  }
};

class BroadcastOp final : public Op {
 public:
  explicit BroadcastOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "broadcast"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return Tensor(shape_, in[0]->item());
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {reshape(sum(g), in[0].shape())};
  }

 private:
  Shape shape_;
};

class ReshapeOp final : public Op {
 public:
  explicit ReshapeOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "flatten"; }
  Tensor forward(std::span<const Tensor* const> in) const override { return in[0]->reshaped(shape_); }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {reshape(g, in[0].shape())};
  }

 private:
  Shape shape_;
};

class MatMulOp final : public Op {
 public:
  MatMulOp(bool ta, bool tb) : ta_(ta), tb_(tb) {}
  std::string_view name() const override { return "matmul"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return kernels::matmul(*in[0], *in[1], ta_, tb_);
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    const Var& a = in[0];
    const Var& b = in[1];
    Var da, db;
    if (!ta_ && !tb_) {
      if (needs[0]) da = matmul(g, b, false, true);
      if (needs[1]) db = matmul(a, g, true, false);
    } else if (!ta_ && tb_) {
      if (needs[0]) da = matmul(g, b, false, false);
      if (needs[1]) db = matmul(g, a, true, false);
    } else if (ta_ && !tb_) {
      if (needs[0]) da = matmul(b, g, false, true);
      if (needs[1]) db = matmul(a, g, false, false);
    } else {
      if (needs[0]) da = matmul(b, g, true, true);
      if (needs[1]) db = matmul(g, a, true, true);
    }
    return {da, db};
  }

 private:
  bool ta_, tb_;
};

// conv2d, its input adjoint and its weight adjoint form a closed family:
// each is bilinear and the partial derivatives of each are members of it.
class Conv2dOp final : public Op {
 public:
  explicit Conv2dOp(Conv2dGeometry geo) : geo_(geo) {}
  std::string_view name() const override { return "conv2d"; }
  Tensor forward(std::span<const Tensor* const> in) const override { return kernels::conv2d(*in[0], *in[1], geo_); }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? conv2d_input_grad(g, in[1], geo_, in[0].shape()) : Var(),
            needs[1] ? conv2d_weight_grad(in[0], g, geo_, in[1].shape()) : Var()};
  }

 private:
  Conv2dGeometry geo_;
};

class Conv2dInputGradOp final : public Op {
 public:
  Conv2dInputGradOp(Conv2dGeometry geo, Shape input_shape) : geo_(geo), input_shape_(std::move(input_shape)) {}
  std::string_view name() const override { return "conv2d_input_grad"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return kernels::conv2d_input_grad(*in[0], *in[1], geo_, input_shape_);
  }
  // inputs: (dy, w); g has the input-image shape.
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? conv2d(g, in[1], geo_) : Var(), needs[1] ? conv2d_weight_grad(g, in[0], geo_, in[1].shape()) : Var()};
  }

 private:
  Conv2dGeometry geo_;
  Shape input_shape_;
};

class Conv2dWeightGradOp final : public Op {
 public:
  Conv2dWeightGradOp(Conv2dGeometry geo, Shape weight_shape) : geo_(geo), weight_shape_(std::move(weight_shape)) {}
  std::string_view name() const override { return "conv2d_weight_grad"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return kernels::conv2d_weight_grad(*in[0], *in[1], geo_, weight_shape_);
  }
  // inputs: (x, dy); g has the weight shape.
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? conv2d_input_grad(in[1], g, geo_, in[0].shape()) : Var(), needs[1] ? conv2d(in[0], g, geo_) : Var()};
  }

 private:
  Conv2dGeometry geo_;
  Shape weight_shape_;
};

void check_channel_layout(const Tensor& x, std::size_t channels, std::string_view op) {
  if (x.rank() < 2 || x.dim(1) != channels) {
    throw ShapeError(std::string(op) + ": expected axis 1 of " + shape_str(x.shape()) + " to have " +
                     std::to_string(channels) + " channels");
  }
}

class BiasAddOp final : public Op {
 public:
  std::string_view name() const override { return "bias_add"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& x = *in[0];
    const Tensor& b = *in[1];
    if (b.rank() != 1) throw ShapeError("bias_add: bias must be rank 1, got " + shape_str(b.shape()));
    check_channel_layout(x, b.dim(0), name());
    Tensor out = x;
    const std::size_t c = b.dim(0), inner = x.numel() / (x.dim(0) * c);
    for (std::size_t n = 0; n < x.dim(0); ++n)
      for (std::size_t k = 0; k < c; ++k) {
        double* p = out.data().data() + (n * c + k) * inner;
        for (std::size_t i = 0; i < inner; ++i) p[i] += b[k];
      }
    return out;
  }
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {g, needs[1] ? bias_reduce(g) : Var()};
  }
};

class BiasReduceOp final : public Op {
 public:
  std::string_view name() const override { return "bias_reduce"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& x = *in[0];
    if (x.rank() < 2) throw ShapeError("bias_reduce needs rank >= 2, got " + shape_str(x.shape()));
    const std::size_t c = x.dim(1), inner = x.numel() / (x.dim(0) * c);
    Tensor out(Shape{c});
    for (std::size_t n = 0; n < x.dim(0); ++n)
      for (std::size_t k = 0; k < c; ++k) {
        const double* p = x.data().data() + (n * c + k) * inner;
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
        out[k] += acc;
      }
    return out;
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {bias_add(Var(Tensor(in[0].shape())), g)};
  }
};

class SigmoidOp final : public Op {
 public:
  std::string_view name() const override { return "sigmoid"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map1(*in[0], [](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
  }
  std::vector<Var> backward(std::span<const Var>, const Var& s, const Var& g, std::span<const bool>) const override {
    return {mul(g, mul(s, affine(s, -1.0, 1.0)))};
  }
};

class ReluOp final : public Op {
 public:
  std::string_view name() const override { return "relu"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map1(*in[0], [](double x) { return x > 0 ? x : 0.0; });
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {relu_mask(g, in[0])};
  }
};

class ReluMaskOp final : public Op {
 public:
  std::string_view name() const override { return "relu_mask"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    return map2(*in[0], *in[1], name(), [](double dy, double x) { return x > 0 ? dy : 0.0; });
  }
  // The mask is piecewise constant in x, so x receives no gradient.
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? relu_mask(g, in[1]) : Var(), Var()};
  }
};

Shape pooled_shape(const Shape& s, std::size_t k, std::string_view op) {
  if (s.size() != 4 || k == 0 || s[2] < k || s[3] < k) {
    throw ShapeError(std::string(op) + ": cannot pool " + shape_str(s) + " with window " + std::to_string(k));
  }
  return {s[0], s[1], s[2] / k, s[3] / k};
}

class AvgPoolOp final : public Op {
 public:
  explicit AvgPoolOp(std::size_t k) : k_(k) {}
  std::string_view name() const override { return "avg_pool"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& x = *in[0];
    const Shape os = pooled_shape(x.shape(), k_, name());
    Tensor out(os);
    const double scale = 1.0 / static_cast<double>(k_ * k_);
    const std::size_t h = x.dim(2), w = x.dim(3);
    for (std::size_t p = 0; p < os[0] * os[1]; ++p)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < k_; ++dy)
            for (std::size_t dx = 0; dx < k_; ++dx) acc += x[p * h * w + (oy * k_ + dy) * w + ox * k_ + dx];
          out[(p * os[2] + oy) * os[3] + ox] = acc * scale;
        }
    return out;
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {avg_pool_grad(g, k_, in[0].shape())};
  }

 private:
  std::size_t k_;
};

class AvgPoolGradOp final : public Op {
 public:
  AvgPoolGradOp(std::size_t k, Shape input_shape) : k_(k), input_shape_(std::move(input_shape)) {}
  std::string_view name() const override { return "avg_pool_grad"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& g = *in[0];
    const Shape os = pooled_shape(input_shape_, k_, name());
    if (g.shape() != os) {
      throw ShapeError("avg_pool_grad: upstream " + shape_str(g.shape()) + " does not match " + shape_str(os));
    }
    Tensor out(input_shape_);
    const double scale = 1.0 / static_cast<double>(k_ * k_);
    const std::size_t h = input_shape_[2], w = input_shape_[3];
    for (std::size_t p = 0; p < os[0] * os[1]; ++p)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          const double v = g[(p * os[2] + oy) * os[3] + ox] * scale;
          for (std::size_t dy = 0; dy < k_; ++dy)
            for (std::size_t dx = 0; dx < k_; ++dx) out[p * h * w + (oy * k_ + dy) * w + ox * k_ + dx] = v;
        }
    return out;
  }
  std::vector<Var> backward(std::span<const Var>, const Var&, const Var& g, std::span<const bool>) const override {
    return {avg_pool(g, k_)};
  }

 private:
  std::size_t k_;
  Shape input_shape_;
};

class GatherOp final : public Op {
 public:
  GatherOp(IndexList index, Shape shape, std::string name)
      : index_(std::move(index)), shape_(std::move(shape)), name_(std::move(name)) {}
  std::string_view name() const override { return name_; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& x = *in[0];
    Tensor out(shape_);
    const auto& idx = *index_;
    if (idx.size() != out.numel()) throw ShapeError("gather: index length does not match output " + shape_str(shape_));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= x.numel()) throw ShapeError("gather: index out of range for " + shape_str(x.shape()));
      out[i] = x[idx[i]];
    }
    return out;
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {scatter(g, index_, in[0].shape())};
  }

 private:
  IndexList index_;
  Shape shape_;
  std::string name_;
};

class ScatterOp final : public Op {
 public:
  ScatterOp(IndexList index, Shape shape) : index_(std::move(index)), shape_(std::move(shape)) {}
  std::string_view name() const override { return "scatter"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& g = *in[0];
    const auto& idx = *index_;
    if (idx.size() != g.numel()) throw ShapeError("scatter: index length does not match input " + shape_str(g.shape()));
    Tensor out(shape_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= out.numel()) throw ShapeError("scatter: index out of range for " + shape_str(shape_));
      out[idx[i]] += g[i];
    }
    return out;
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool>) const override {
    return {gather(g, index_, in[0].shape())};
  }

 private:
  IndexList index_;
  Shape shape_;
};

void check_logits_targets(const Tensor& logits, const Tensor& targets, std::string_view op) {
  if (logits.rank() != 2) throw ShapeError(std::string(op) + ": logits must be (batch, classes), got " + shape_str(logits.shape()));
  if (targets.shape() != logits.shape()) {
    throw ShapeError(std::string(op) + ": targets " + shape_str(targets.shape()) + " do not match logits " +
                     shape_str(logits.shape()) + " (batch " + std::to_string(targets.rank() ? targets.dim(0) : 0) +
                     " vs " + std::to_string(logits.dim(0)) + ")");
  }
}

// y * (G - rowsum(y * G)) for row-softmax output y.
class SoftmaxVjpOp final : public TerminalOp {
 public:
  std::string_view name() const override { return "softmax_vjp"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor& y = *in[0];
    const Tensor& g = *in[1];
    const std::size_t rows = y.dim(0), cols = y.dim(1);
    Tensor out(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - dot);
    }
    return out;
  }
};

class SoftmaxOp final : public Op {
 public:
  std::string_view name() const override { return "softmax"; }
  Tensor forward(std::span<const Tensor* const> in) const override { return kernels::softmax_rows(*in[0]); }
  std::vector<Var> backward(std::span<const Var>, const Var& y, const Var& g, std::span<const bool>) const override {
    return {apply(std::make_shared<SoftmaxVjpOp>(), {y, g})};
  }
};

// -g * log_softmax(logits) / N: derivative of the mean cross-entropy in the targets.
class CeTargetGradOp final : public TerminalOp {
 public:
  std::string_view name() const override { return "ce_target_grad"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    Tensor out = kernels::log_softmax_rows(*in[0]);
    const double scale = -in[1]->item() / static_cast<double>(in[0]->dim(0));
    for (double& v : out.data()) v *= scale;
    return out;
  }
};

// g / N * (s * G - s * rowsum(s * G)), s = softmax(logits): the logits
// derivative of softmax_cross_entropy_grad contracted with G.
class CeGradLogitsVjpOp final : public TerminalOp {
 public:
  std::string_view name() const override { return "ce_grad_logits_vjp"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    const Tensor s = kernels::softmax_rows(*in[0]);
    const Tensor& g2 = *in[1];
    const std::size_t rows = s.dim(0), cols = s.dim(1);
    const double scale = in[2]->item() / static_cast<double>(rows);
    Tensor out(s.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += s[r * cols + c] * g2[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = scale * s[r * cols + c] * (g2[r * cols + c] - dot);
    }
    return out;
  }
};

class SoftmaxCrossEntropyOp final : public Op {
 public:
  std::string_view name() const override { return "softmax_cross_entropy"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    check_logits_targets(*in[0], *in[1], name());
    const Tensor ls = kernels::log_softmax_rows(*in[0]);
    const Tensor& t = *in[1];
    double acc = 0.0;
    for (std::size_t i = 0; i < ls.numel(); ++i) acc -= t[i] * ls[i];
    return Tensor::scalar(acc / static_cast<double>(ls.dim(0)));
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g, std::span<const bool> needs) const override {
    return {needs[0] ? softmax_cross_entropy_grad(in[0], in[1], g) : Var(),
            needs[1] ? apply(std::make_shared<CeTargetGradOp>(), {in[0], g}) : Var()};
  }
};

class SoftmaxCrossEntropyGradOp final : public Op {
 public:
  std::string_view name() const override { return "softmax_cross_entropy_grad"; }
  Tensor forward(std::span<const Tensor* const> in) const override {
    check_logits_targets(*in[0], *in[1], name());
    Tensor out = kernels::softmax_rows(*in[0]);
    const Tensor& t = *in[1];
    const double scale = in[2]->item() / static_cast<double>(out.dim(0));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = scale * (out[i] - t[i]);
    return out;
  }
  std::vector<Var> backward(std::span<const Var> in, const Var&, const Var& g2, std::span<const bool> needs) const override {
    const Var& logits = in[0];
    const Var& targets = in[1];
    const Var& g = in[2];
    const double inv_n = 1.0 / static_cast<double>(logits.shape()[0]);
    Var d_logits, d_targets, d_g;
    if (needs[0]) d_logits = apply(std::make_shared<CeGradLogitsVjpOp>(), {logits, g2, g});
    if (needs[1]) d_targets = mul(g2, broadcast(affine(g, -inv_n), g2.shape()));
    if (needs[2]) d_g = sum(mul(g2, softmax_cross_entropy_grad(logits, targets, Var(Tensor::scalar(1.0)))));
    return {d_logits, d_targets, d_g};
  }
};

}  // namespace

Var add(const Var& a, const Var& b) { return apply(std::make_shared<AddOp>(), {a, b}); }
Var sub(const Var& a, const Var& b) { return apply(std::make_shared<SubOp>(), {a, b}); }
Var mul(const Var& a, const Var& b) { return apply(std::make_shared<MulOp>(), {a, b}); }
Var square(const Var& a) { return apply(std::make_shared<SquareOp>(), {a}); }
Var affine(const Var& x, double a, double b) { return apply(std::make_shared<AffineOp>(a, b), {x}); }
Var rsqrt(const Var& x) { return apply(std::make_shared<RsqrtOp>(), {x}); }
Var sum(const Var& x) { return apply(std::make_shared<SumOp>(), {x}); }

Var broadcast(const Var& scalar, Shape shape) {
  if (scalar.value().numel() != 1) throw ShapeError("broadcast source must be a scalar, got " + shape_str(scalar.shape()));
  return apply(std::make_shared<BroadcastOp>(std::move(shape)), {scalar});
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return apply(std::make_shared<ReshapeOp>(std::move(shape)), {x});
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  return apply(std::make_shared<MatMulOp>(trans_a, trans_b), {a, b});
}

Var conv2d(const Var& x, const Var& w, Conv2dGeometry geo) { return apply(std::make_shared<Conv2dOp>(geo), {x, w}); }

Var conv2d_input_grad(const Var& dy, const Var& w, Conv2dGeometry geo, Shape input_shape) {
  return apply(std::make_shared<Conv2dInputGradOp>(geo, std::move(input_shape)), {dy, w});
}

Var conv2d_weight_grad(const Var& x, const Var& dy, Conv2dGeometry geo, Shape weight_shape) {
  return apply(std::make_shared<Conv2dWeightGradOp>(geo, std::move(weight_shape)), {x, dy});
}

Var bias_add(const Var& x, const Var& b) { return apply(std::make_shared<BiasAddOp>(), {x, b}); }
Var bias_reduce(const Var& x) { return apply(std::make_shared<BiasReduceOp>(), {x}); }
Var sigmoid(const Var& x) { return apply(std::make_shared<SigmoidOp>(), {x}); }
Var relu(const Var& x) { return apply(std::make_shared<ReluOp>(), {x}); }
Var relu_mask(const Var& dy, const Var& x) { return apply(std::make_shared<ReluMaskOp>(), {dy, x}); }
Var avg_pool(const Var& x, std::size_t k) { return apply(std::make_shared<AvgPoolOp>(k), {x}); }

Var avg_pool_grad(const Var& dy, std::size_t k, Shape input_shape) {
  return apply(std::make_shared<AvgPoolGradOp>(k, std::move(input_shape)), {dy});
}

Var max_pool(const Var& x, std::size_t k) {
  const Tensor& v = x.value();
  const Shape os = pooled_shape(v.shape(), k, "max_pool");
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(shape_numel(os));
  const std::size_t h = v.dim(2), w = v.dim(3);
  for (std::size_t p = 0; p < os[0] * os[1]; ++p)
    for (std::size_t oy = 0; oy < os[2]; ++oy)
      for (std::size_t ox = 0; ox < os[3]; ++ox) {
        std::size_t best = p * h * w + oy * k * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t at = p * h * w + (oy * k + dy) * w + ox * k + dx;
            if (v[at] > v[best]) best = at;
          }
        index->push_back(best);
      }
  return apply(std::make_shared<GatherOp>(std::move(index), os, "max_pool"), {x});
}

Var gather(const Var& x, IndexList index, Shape shape) {
  return apply(std::make_shared<GatherOp>(std::move(index), std::move(shape), "gather"), {x});
}

Var scatter(const Var& g, IndexList index, Shape shape) {
  return apply(std::make_shared<ScatterOp>(std::move(index), std::move(shape)), {g});
}

Var softmax(const Var& logits) { return apply(std::make_shared<SoftmaxOp>(), {logits}); }

Var softmax_cross_entropy(const Var& logits, const Var& targets) {
  return apply(std::make_shared<SoftmaxCrossEntropyOp>(), {logits, targets});
}

Var softmax_cross_entropy_grad(const Var& logits, const Var& targets, const Var& g) {
  return apply(std::make_shared<SoftmaxCrossEntropyGradOp>(), {logits, targets, g});
}

// ---------------------------------------------------------------------------

std::string ComputationRecord::Entry::name() const { return op ? std::string(op->name()) : std::string("leaf"); }

ComputationRecord trace(const Var& root) {
  const std::vector<const Node*> order = topo_order(root.node(), false);
  std::unordered_map<const Node*, std::size_t> index;
  ComputationRecord rec;
  rec.nodes.reserve(order.size());
  for (const Node* n : order) {
    ComputationRecord::Entry e;
    e.op = n->op;
    e.value = n->value;
    for (const Var& in : n->inputs) e.inputs.push_back(index.at(in.node()));
    index[n] = rec.nodes.size();
    rec.nodes.push_back(std::move(e));
  }
  return rec;
}

Tensor replay(const ComputationRecord& record) {
  if (record.nodes.empty()) throw Error("replay of an empty record");
  std::vector<Tensor> values(record.nodes.size());
  for (std::size_t i = 0; i < record.nodes.size(); ++i) {
    const auto& e = record.nodes[i];
    if (!e.op) {
      values[i] = *e.value;
      continue;
    }
    std::vector<const Tensor*> in;
    for (std::size_t j : e.inputs) in.push_back(&values[j]);
    values[i] = e.op->forward(in);
  }
  return values.back();
}

}  // namespace dragd::ag
