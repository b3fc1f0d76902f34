#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "recog/tensor.hpp"

// Differentiable tensor operations. Every op records a backward rule on the
// active GradTape when one of its inputs requires grad.
//
// "Row" ops treat dimension 0 as the row axis and flatten the remaining
// dimensions into one row of width numel / dim(0).

namespace recog {

/// [m x k] * [k x n] -> [m x n]. Each output row depends only on the matching
/// row of `a`, accumulated in ascending k.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x * w^T + bias for x [m x k], w [n x k], bias [n] (bias may be undefined).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);
/// affine against weight rows [row_begin, row_begin + rows) only.
Tensor affine_rows(const Tensor& x, const Tensor& w, std::size_t row_begin, std::size_t rows, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// x if x >= 0 else slope * x; slope must lie in (0, 1).
Tensor leaky_relu(const Tensor& x, double slope);

/// Row-wise softmax of a rank-2 tensor with row-max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Softmax over the entries of `values` [E] sharing a segment id.
Tensor segment_softmax(const Tensor& values, std::span<const std::size_t> segment_ids,
                       std::size_t n_segments);

/// Row i of the result sums the rows of `values` whose id is i, in ascending
/// row order. Empty segments produce zero rows.
Tensor segment_sum(const Tensor& values, std::span<const std::size_t> segment_ids,
                   std::size_t n_segments);

/// Selects rows of x; indices may repeat.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

/// Multiplies row i of x by w[i]; w has one entry per row.
Tensor scale_rows(const Tensor& x, const Tensor& w);

/// Euclidean norm of each row. The gradient at a zero row is taken as zero.
Tensor row_norms(const Tensor& x);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Valid (unpadded) cross-correlation plus per-channel bias.
/// input: [C_in x H x W] or [B x C_in x H x W]; kernels: [C_out x C_in x k x k];
/// bias: [C_out] or undefined. Output spatial size is floor((H - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride);

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride);

}  // namespace recog
