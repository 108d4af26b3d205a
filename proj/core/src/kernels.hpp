#pragma once

// Raw tensor kernels behind the autograd primitives. Single-threaded with a
// fixed summation order, so results are bit-reproducible.

#include "dragd/autograd.hpp"
#include "dragd/tensor.hpp"

namespace dragd::kernels {

Shape conv2d_output_shape(const Shape& x, const Shape& w, ag::Conv2dGeometry geo);

Tensor conv2d(const Tensor& x, const Tensor& w, ag::Conv2dGeometry geo);
Tensor conv2d_input_grad(const Tensor& dy, const Tensor& w, ag::Conv2dGeometry geo, const Shape& input_shape);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& dy, ag::Conv2dGeometry geo, const Shape& weight_shape);

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);

/// Row-wise softmax of a rank-2 tensor.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace dragd::kernels
