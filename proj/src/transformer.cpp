#include "lfuse/transformer.hpp"

#include "lfuse/ops.hpp"

namespace lfuse {

template <typename T>
void init_block(ParameterSet<T>& params, const std::string& prefix, BlockShape shape,
                Rng& rng, double stddev) {
  const std::size_t d = shape.width, f = shape.ff_width;
  auto matrix = [&](const char* name, std::size_t out, std::size_t in) {
    params.add(prefix + name, rng.normal_tensor<T>({out, in}, stddev));
  };
  auto zeros = [&](const char* name, std::size_t n) { params.add(prefix + name, Tensor<T>({n})); };
  params.add(prefix + "ln1.gain", Tensor<T>::filled({d}, T(1)));
  zeros("ln1.bias", d);
  matrix("attn.wq", d, d);
  zeros("attn.bq", d);
  matrix("attn.wk", d, d);
  zeros("attn.bk", d);
  matrix("attn.wv", d, d);
  zeros("attn.bv", d);
  matrix("attn.wo", d, d);
  zeros("attn.bo", d);
  params.add(prefix + "ln2.gain", Tensor<T>::filled({d}, T(1)));
  zeros("ln2.bias", d);
  matrix("ff.w1", f, d);
  zeros("ff.b1", f);
  matrix("ff.w2", d, f);
  zeros("ff.b2", d);
}

template <typename T>
BlockVars<T> bind_block(const BoundParams<T>& b, const std::string& prefix) {
  return BlockVars<T>{
      b[prefix + "ln1.gain"], b[prefix + "ln1.bias"], b[prefix + "attn.wq"],
      b[prefix + "attn.bq"],  b[prefix + "attn.wk"],  b[prefix + "attn.bk"],
      b[prefix + "attn.wv"],  b[prefix + "attn.bv"],  b[prefix + "attn.wo"],
      b[prefix + "attn.bo"],  b[prefix + "ln2.gain"], b[prefix + "ln2.bias"],
      b[prefix + "ff.w1"],    b[prefix + "ff.b1"],    b[prefix + "ff.w2"],
      b[prefix + "ff.b2"],
  };
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_row(matmul_nt(x, weight), bias);
}

template <typename T>
Var<T> block_forward(const BlockVars<T>& p, Var<T> x, std::size_t heads, std::size_t group,
                     bool causal) {
  const Var<T> h = layer_norm(x, p.ln1_gain, p.ln1_bias);
  const Var<T> q = linear(h, p.wq, p.bq);
  const Var<T> k = linear(h, p.wk, p.bk);
  const Var<T> v = linear(h, p.wv, p.bv);
  const Var<T> attn = attention(q, k, v, heads, group, causal);
  x = add(x, linear(attn, p.wo, p.bo));
  const Var<T> h2 = layer_norm(x, p.ln2_gain, p.ln2_bias);
  const Var<T> ff = linear(gelu(linear(h2, p.w1, p.b1)), p.w2, p.b2);
  return add(x, ff);
}

#define LFUSE_INSTANTIATE_BLOCK(T)                                                          \
  template void init_block(ParameterSet<T>&, const std::string&, BlockShape, Rng&, double); \
  template BlockVars<T> bind_block(const BoundParams<T>&, const std::string&);              \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> block_forward(const BlockVars<T>&, Var<T>, std::size_t, std::size_t, bool);

LFUSE_INSTANTIATE_BLOCK(float)
LFUSE_INSTANTIATE_BLOCK(double)

}  // namespace lfuse
