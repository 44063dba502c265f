#pragma once

#include <string>

#include "lfuse/params.hpp"
#include "lfuse/rng.hpp"

namespace lfuse {

// Tape handles for one pre-norm transformer encoder block. Linear weights
// are [out x in].
template <typename T>
struct BlockVars {
  Var<T> ln1_gain, ln1_bias;
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Var<T> ln2_gain, ln2_bias;
  Var<T> w1, b1, w2, b2;
};

struct BlockShape {
  std::size_t width = 0;
  std::size_t ff_width = 0;
};

// Registers `<prefix>ln1.gain`, `<prefix>attn.wq`, ... in `params`. Weight
// matrices are N(0, stddev^2), biases zero, norm gains one.
template <typename T>
void init_block(ParameterSet<T>& params, const std::string& prefix, BlockShape shape,
                Rng& rng, double stddev);

template <typename T>
BlockVars<T> bind_block(const BoundParams<T>& bound, const std::string& prefix);

// x + Attn(LN1(x)), then + FF(LN2(x)) with a GELU feed-forward. Attention
// runs independently inside each group of `group` rows.
template <typename T>
Var<T> block_forward(const BlockVars<T>& p, Var<T> x, std::size_t heads,
                     std::size_t group, bool causal);

// y = x W^T + b
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

}  // namespace lfuse
