#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lfuse/tape.hpp"

// Differentiable ops recorded on a Tape. Matrix ops take rank-2 inputs;
// there is no general broadcasting, only the explicit row-bias add.

namespace lfuse {

enum class Reduction { kMean, kSum };

// [m x k] * [k x n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// [m x k] * [n x k]^T. Used for linear layers with [out x in] weights.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

// Adds `bias` (numel == cols) to every row of `a`.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias);

// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

// a + c elementwise for a constant c.
template <typename T>
Var<T> shift(Var<T> a, T offset);

// a * s for a single-element Var s.
template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s);

template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows);

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

// Max-subtracted softmax along `axis` (negative counts from the back).
template <typename T>
Var<T> softmax(Var<T> a, int axis = -1);

// Row-wise layer normalisation with learned gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));

// Exact (erf) GELU.
template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);

// -log softmax(logits[k])[targets[k]] reduced over rows. `logits` is [V] or
// [K x V].
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                     Reduction reduction = Reduction::kMean);

// Scaled dot-product multi-head attention on [N x d] inputs. Rows are
// partitioned into independent groups of `group` consecutive rows; attention
// never crosses a group boundary. With `causal`, row i of a group only sees
// rows <= i of that group.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads,
                 std::size_t group, bool causal);

// out[t] = sum_l weights[t, l] * stack[t, l, :] for stack [T x L x d].
// `weights` is either [T x L] (one row per token) or L elements shared by all
// tokens.
template <typename T>
Var<T> weighted_layer_sum(Var<T> stack, Var<T> weights);

// Plain-tensor helpers for code paths that never need gradients.
template <typename T>
Tensor<T> softmax_values(const Tensor<T>& v, int axis = -1);

template <typename T>
std::vector<T> row_nll(const Tensor<T>& logits,
                       std::span<const std::int32_t> targets);

}  // namespace lfuse
