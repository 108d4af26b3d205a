#include "dragd/gradients.hpp"

#include <cmath>
#include <memory>

#include "dragd/autograd.hpp"
#include "dragd/error.hpp"

namespace dragd {
namespace {

std::vector<ag::Var> param_leaves(const Model& model) {
  std::vector<ag::Var> out;
  for (Tensor& t : unflatten(model.params, model.layout)) out.emplace_back(std::move(t), true);
  return out;
}

void check_batch(const Tensor& inputs, const Tensor& targets) {
  if (inputs.rank() == 0 || targets.rank() == 0 || inputs.dim(0) != targets.dim(0)) {
    throw ShapeError("inputs batch dimension " + std::to_string(inputs.rank() ? inputs.dim(0) : 0) +
                     " differs from labels batch dimension " + std::to_string(targets.rank() ? targets.dim(0) : 0));
  }
}

void check_target_layout(const Model& model, const FlatGradient& target) {
  if (!(target.layout == model.layout)) {
    throw ShapeError("target gradient layout (dimension " + std::to_string(target.layout.dim()) + ", " +
                     std::to_string(target.layout.slots().size()) + " tensors) does not match the model layout (dimension " +
                     std::to_string(model.layout.dim()) + ", " + std::to_string(model.layout.slots().size()) + " tensors)");
  }
  if (target.values.size() != target.layout.dim()) {
    throw ShapeError("target gradient holds " + std::to_string(target.values.size()) + " values for dimension " +
                     std::to_string(target.layout.dim()));
  }
}

ag::Var loss_graph(const Model& model, std::span<const ag::Var> params, const ag::Var& inputs, const ag::Var& targets) {
  return ag::softmax_cross_entropy(forward(model, params, inputs), targets);
}

// Objective graph in terms of the recorded parameter gradient.
ag::Var match_graph(std::span<const ag::Var> grads, const std::vector<Tensor>& target, MatchLoss kind) {
  if (kind == MatchLoss::squared_l2) {
    ag::Var total;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      ag::Var term = ag::sum(ag::square(ag::sub(grads[i], ag::Var(target[i]))));
      total = total.defined() ? ag::add(total, term) : term;
    }
    return total;
  }
  double tnorm2 = 0.0;
  for (const Tensor& t : target)
    for (double v : t.data()) tnorm2 += v * v;
  if (!(tnorm2 > 0.0)) throw Error("cosine matching needs a non-zero target gradient");
  ag::Var dot, norm2;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    ag::Var d = ag::sum(ag::mul(grads[i], ag::Var(target[i])));
    ag::Var n = ag::sum(ag::square(grads[i]));
    dot = dot.defined() ? ag::add(dot, d) : d;
    norm2 = norm2.defined() ? ag::add(norm2, n) : n;
  }
  return ag::affine(ag::mul(dot, ag::rsqrt(norm2)), -1.0 / std::sqrt(tnorm2), 1.0);
}

void zero_masked_rows(Tensor& t, std::span<const bool> mask) {
  const std::size_t rs = t.row_size();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) continue;
    for (std::size_t i = 0; i < rs; ++i) t[r * rs + i] = 0.0;
  }
}

}  // namespace

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor out(Shape{labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ShapeError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    out[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

Tensor targets_from_labels(const Tensor& labels, std::size_t num_classes) {
  if (labels.rank() == 2) {
    if (labels.dim(1) != num_classes) {
      throw ShapeError("label rows have width " + std::to_string(labels.dim(1)) + " but the model outputs " +
                       std::to_string(num_classes) + " classes");
    }
    return labels;
  }
  if (labels.rank() != 1) throw ShapeError("labels must be (batch) or (batch, classes), got " + shape_str(labels.shape()));
  std::vector<int> idx(labels.numel());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double v = labels[i];
    if (v != std::floor(v)) throw ShapeError("class index " + std::to_string(v) + " is not an integer");
    idx[i] = static_cast<int>(v);
  }
  return one_hot(idx, num_classes);
}

double forward_loss(const Model& model, const Tensor& inputs, const Tensor& labels) {
  const Tensor targets = targets_from_labels(labels, model.spec.num_classes);
  check_batch(inputs, targets);
  std::vector<ag::Var> params;
  for (Tensor& t : unflatten(model.params, model.layout)) params.emplace_back(std::move(t));
  return loss_graph(model, params, ag::Var(inputs), ag::Var(targets)).value().item();
}

FlatGradient param_grad(const Model& model, const Tensor& inputs, const Tensor& labels) {
  const Tensor targets = targets_from_labels(labels, model.spec.num_classes);
  check_batch(inputs, targets);
  const std::vector<ag::Var> params = param_leaves(model);
  const ag::Var loss = loss_graph(model, params, ag::Var(inputs), ag::Var(targets));
  const std::vector<ag::Var> grads = ag::grad(loss, params);
  FlatGradient out{std::vector<double>(model.layout.dim()), model.layout};
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto src = grads[i].value().data();
    std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(model.layout.slots()[i].offset));
  }
  return out;
}

MatchEvaluation evaluate_match(const Model& model, const Tensor& virtual_inputs, const VirtualLabels& labels,
                               const FlatGradient& target_grad, std::span<const bool> update_mask, MatchLoss kind) {
  check_target_layout(model, target_grad);
  if (virtual_inputs.rank() == 0 || update_mask.size() != virtual_inputs.dim(0)) {
    throw ShapeError("update mask of length " + std::to_string(update_mask.size()) + " for a virtual batch of " +
                     std::to_string(virtual_inputs.rank() ? virtual_inputs.dim(0) : 0));
  }
  const std::vector<ag::Var> params = param_leaves(model);
  const ag::Var x(virtual_inputs, true);

  ag::Var label_leaf;
  ag::Var targets;
  if (labels.soft) {
    if (labels.values.rank() != 2 || labels.values.dim(1) != model.spec.num_classes) {
      throw ShapeError("soft label logits must be (batch, " + std::to_string(model.spec.num_classes) + "), got " +
                       shape_str(labels.values.shape()));
    }
    label_leaf = ag::Var(labels.values, true);
    targets = ag::softmax(label_leaf);
  } else {
    targets = ag::Var(targets_from_labels(labels.values, model.spec.num_classes));
  }
  check_batch(virtual_inputs, targets.value());

  const ag::Var loss = loss_graph(model, params, x, targets);
  const std::vector<ag::Var> grads = ag::grad(loss, params, /*create_graph=*/true);
  const ag::Var objective = match_graph(grads, unflatten(target_grad.values, target_grad.layout), kind);

  MatchEvaluation out;
  out.loss = objective.value().item();
  if (labels.soft) {
    const std::vector<ag::Var> wrt{x, label_leaf};
    std::vector<ag::Var> d = ag::grad(objective, wrt);
    out.input_grad = d[0].value();
    out.label_grad = d[1].value();
    zero_masked_rows(*out.label_grad, update_mask);
  } else {
    const std::vector<ag::Var> wrt{x};
    out.input_grad = ag::grad(objective, wrt)[0].value();
  }
  zero_masked_rows(out.input_grad, update_mask);
  return out;
}

double match_loss(const Model& model, const Tensor& virtual_inputs, const Tensor& virtual_labels,
                  const FlatGradient& target_grad, MatchLoss kind) {
  check_target_layout(model, target_grad);
  const FlatGradient g = param_grad(model, virtual_inputs, virtual_labels);
  const std::vector<Tensor> grads = unflatten(g.values, g.layout);
  std::vector<ag::Var> vars(grads.begin(), grads.end());
  return match_graph(vars, unflatten(target_grad.values, target_grad.layout), kind).value().item();
}

Tensor data_grad_of_match_loss(const Model& model, const Tensor& virtual_inputs, const Tensor& virtual_labels,
                               const FlatGradient& target_grad, std::span<const bool> update_mask) {
  return evaluate_match(model, virtual_inputs, {virtual_labels, false}, target_grad, update_mask).input_grad;
}

}  // namespace dragd
