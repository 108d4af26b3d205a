#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dragd/model.hpp"
#include "dragd/tensor.hpp"

namespace dragd {

/// Turns labels into (N, C) target rows. Accepts class indices of shape (N)
/// or probability/one-hot rows of shape (N, C).
Tensor targets_from_labels(const Tensor& labels, std::size_t num_classes);
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

/// Mean softmax cross-entropy of the model on a labelled batch.
double forward_loss(const Model& model, const Tensor& inputs, const Tensor& labels);

/// d(mean loss)/d(theta), flattened in the model's layout.
FlatGradient param_grad(const Model& model, const Tensor& inputs, const Tensor& labels);

enum class MatchLoss {
  squared_l2,  // ||grad(x) - target||^2
  cosine,      // 1 - <grad(x), target> / (||grad(x)|| ||target||)
};

/// Labels attached to a virtual batch. With `soft` set, `values` holds
/// per-row label logits (N, C) that pass through a softmax and are
/// optimised alongside the pixels; otherwise `values` is fixed (see
/// targets_from_labels).
struct VirtualLabels {
  Tensor values;
  bool soft = false;
};

struct MatchEvaluation {
  double loss = 0.0;
  Tensor input_grad;                     // shape of the virtual inputs
  std::optional<Tensor> label_grad;      // present for soft labels
};

/// Gradient-matching objective between the parameter gradient induced by a
/// virtual batch and a captured target gradient, together with its
/// derivative with respect to the virtual pixels. The derivative is exact:
/// the first backward pass is recorded and differentiated again. Rows whose
/// `update_mask` entry is false come back as exact zeros.
MatchEvaluation evaluate_match(const Model& model, const Tensor& virtual_inputs, const VirtualLabels& labels,
                               const FlatGradient& target_grad, std::span<const bool> update_mask,
                               MatchLoss kind = MatchLoss::squared_l2);

/// Value of the matching objective only (no second-order pass).
double match_loss(const Model& model, const Tensor& virtual_inputs, const Tensor& virtual_labels,
                  const FlatGradient& target_grad, MatchLoss kind = MatchLoss::squared_l2);

/// d ||grad_theta L(virtual_inputs) - target_grad||^2 / d virtual_inputs with
/// masked rows zeroed.
Tensor data_grad_of_match_loss(const Model& model, const Tensor& virtual_inputs, const Tensor& virtual_labels,
                               const FlatGradient& target_grad, std::span<const bool> update_mask);

}  // namespace dragd
