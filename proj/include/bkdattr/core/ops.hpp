#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bkdattr/core/tensor.hpp"

// Differentiable tensor operations. Unless stated otherwise every op records
// itself on the autograd graph when gradients are enabled and any input
// requires them.
namespace bkd::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] . [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
// [m x n] + [n] broadcast over rows.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
// Sum of a non-empty list of same-shaped tensors, accumulated left to right.
Tensor add_n(std::span<const Tensor> terms);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);

// Max-subtracted softmax along `axis`. NaN input raises NumericalError.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Row-wise softmax of a square score matrix restricted to columns <= row.
// Masked entries are exactly zero.
Tensor causal_softmax(const Tensor& scores);

// x / rms(x) * weight, row-wise over [T x d] with weight [d].
Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps = 1e-5f);
// Rotary position embedding over each head slice of width head_dim, rotating
// adjacent pairs; row t is position `offset + t`.
Tensor rope(const Tensor& x, std::size_t head_dim, std::size_t offset = 0, float base = 10000.0f);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
// Rows of `table` selected by ids.
Tensor embedding(const Tensor& table, std::span<const int32_t> ids);

// Copy of x with row `r` overwritten by `value` (x's gradient on that row is zero).
Tensor replace_row(const Tensor& x, std::size_t r, const Tensor& value);
// Copy of x with `coeff * value` added to row `r`.
Tensor add_to_row(const Tensor& x, std::size_t r, const Tensor& value, float coeff = 1.0f);

// Sum over rows of -log softmax(logits)[t, targets[t]]; targets < 0 are ignored.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int32_t> targets);
// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets; logits [N x 1] or [N].
Tensor bce_with_logits(const Tensor& logits, std::span<const float> targets);

// Inverted dropout with a caller-provided rng; identity when rate == 0.
Tensor dropout(const Tensor& x, float rate, std::mt19937_64& rng);

}  // namespace bkd::ops
