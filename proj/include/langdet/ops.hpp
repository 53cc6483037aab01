#pragma once

#include <cstddef>
#include <vector>

#include "langdet/tensor.hpp"

namespace langdet {

// Forward primitives. All shapes are explicit; mismatches throw
// std::invalid_argument naming both shapes. Results are recorded on the tape
// whenever any input requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_n(const std::vector<Tensor>& parts);  // elementwise sum of a list

// 2-d matrix product; transpose_b multiplies by b's transpose.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// axis 0 stacks rows (1-d tensors concatenate end to end), axis 1 joins
// matrix columns.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0);
Tensor slice(const Tensor& v, std::size_t begin, std::size_t end);  // 1-d
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& t, Shape shape);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

Tensor relu(const Tensor& t);
Tensor gelu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor vmin(const Tensor& a, const Tensor& b);
Tensor vmax(const Tensor& a, const Tensor& b);

// Row-wise layer normalization with learnable gain/bias (1-d input is one row).
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// softmax(x / temperature); temperature must be > 0.
Tensor softmax(const Tensor& v, double temperature = 1.0);
Tensor softmax_rows(const Tensor& m, double temperature = 1.0);

// -log softmax(logits)[label], numerically stable.
Tensor cross_entropy(const Tensor& logits, std::size_t label);
// Per-row cross-entropy, returns a vector of n losses for an n-by-k matrix.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels);

// KL(p || q) = sum p_i log(p_i / q_i), with both logs floored at 1e-12.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
// Rejects inputs with norm <= 1e-12.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// x: (C,H,W), w: (Co,C,kh,kw), bias: (Co). Zero padding, square stride.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor global_avg_pool(const Tensor& x);  // (C,H,W) -> (C)

// Adds a length-d vector to every row of an n-by-d matrix.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

// Gathers rows of an embedding table; gradients scatter-add back.
Tensor embedding_rows(const Tensor& table, const std::vector<std::size_t>& ids);

// Token matrix (h*w rows, c cols) to channel-first image (c,h,w).
Tensor tokens_to_chw(const Tensor& m, std::size_t h, std::size_t w);

}  // namespace langdet
