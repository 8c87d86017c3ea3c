#pragma once

// Differentiable primitives. Matrices are 2-D [rows x cols]; vectors are 1-D.
// Shapes must match exactly except for add_row_bias, which broadcasts a
// length-cols vector over rows.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sdmim/tensor.hpp"

namespace sdmim {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> abs(const Tensor<T>& x);
/// tanh-approximated GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// log(max(x, floor)); gradient is zero where the floor is active.
template <typename T> Tensor<T> log_clamped(const Tensor<T>& x, T floor);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Softmax over the last axis with max subtraction.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
/// Per-row standardization with population variance, then gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
/// Divides each row by max(||row||_2, eps).
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps);

/// Selects rows in index order; pulls back by scatter-add.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx);
/// Rows with flag set are replaced by `token` (a length-cols vector).
template <typename T>
Tensor<T> replace_rows(const Tensor<T>& x, std::span<const std::uint8_t> flags, const Tensor<T>& token);

/// Multi-head self-attention restricted to groups of rows (windows).
///
/// q, k, v are [rows x dim]; every row belongs to exactly one group and only
/// attends to rows of its own group. dim is split into `heads` contiguous
/// slices; scores are scaled by 1/sqrt(dim/heads).
template <typename T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const std::vector<std::vector<std::size_t>>& groups, std::size_t heads);

/// x * W + b with W stored [in x out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

/// C += A * B for row-major A [m x k], B [k x n].
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace sdmim
