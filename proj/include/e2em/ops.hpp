#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "e2em/autodiff.hpp"
#include "e2em/tensor.hpp"

namespace e2em {

// Differentiable operations. Every op requires its operands to live on the
// same tape; shapes must agree exactly (the only broadcast is add_bias).

/// [m x k] . [k x n] -> [m x n]
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
/// Adds a bias vector of length n to every row of a tensor whose last axis is n.
Var add_bias(Var x, Var bias);
/// scale * x + shift, elementwise.
Var affine(Var x, double scale, double shift);

Var sigmoid(Var x);
Var tanh(Var x);
/// x if x >= 0, slope * x otherwise.
Var leaky_relu(Var x, double slope);

/// Row-wise softmax of a [b x c] tensor with per-row max subtraction.
Var softmax_rows(Var z);
/// Mean over rows of -log(max(pred[target], 1e-12)); target must be one-hot.
Var cross_entropy(Var pred, const Tensor& target);
/// Sum of all elements, as a [1] tensor.
Var sum(Var x);

/// Concatenates [b x k_i] tensors along columns.
Var concat_cols(std::span<const Var> parts);
/// Columns [begin, end) of a [b x k] tensor.
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

/// Time step t of a [b x T x d] sequence, as [b x d].
Var slice_time(Var seq, std::size_t t);
/// Stacks T tensors of shape [b x d] into [b x T x d].
Var stack_time(std::span<const Var> steps);

/// NHWC convolution with "same" padding. kernel is [kh x kw x cin x cout].
Var conv2d(Var images, Var kernel, std::size_t stride);
/// Spatial output size of conv2d with "same" padding.
std::size_t conv_same_output(std::size_t input, std::size_t stride);

/// [b x h x w x f] -> [b x f], mean over spatial positions.
Var global_avg_pool(Var features);

/// Elementwise product with a constant tensor (dropout masks).
Var mul_const(Var x, const Tensor& factor);
/// Elementwise sum with a constant tensor (additive noise).
Var add_const(Var x, const Tensor& offset);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace e2em
