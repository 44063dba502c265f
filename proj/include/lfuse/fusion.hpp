#pragma once

#include "lfuse/config.hpp"
#include "lfuse/params.hpp"
#include "lfuse/rng.hpp"

namespace lfuse {

// Fusion result on a tape. `weights` is [L] for global/last (shared by every
// token) and [T x L] for token-wise.
template <typename T>
struct FusionOutput {
  Var<T> vectors;  // [T x d]
  Var<T> weights;
};

// Plain-value form of FusionOutput.
template <typename T>
struct FusedSequence {
  Tensor<T> vectors;
  Tensor<T> weights;
};

// tau = base_temp + temp * factor. Logs a warning once per process when
// tau <= 0, since that inverts the weight ordering.
double effective_temperature(double base_temp, double temp, double factor);
void warn_if_nonpositive_temperature(double tau);

// Registers the trainable fusion tensors for config.fusion_mode:
//   global:    fusion.w [L], fusion.temp [1] (learned temperature only)
//   tokenwise: fusion.query [d], fusion.pos [(L+1) x d], fusion.block.*,
//              fusion.score.weight [L x d], fusion.score.bias [L]
//   last:      nothing
template <typename T>
void init_fusion_params(ParameterSet<T>& params, const RunConfig& config, Rng& rng);

// softmax(tau * w). `temp` is ignored (may be invalid) in fixed mode.
template <typename T>
Var<T> global_alpha(Var<T> w, Var<T> temp, const RunConfig& config);

// vectors[t] = sum_l alpha_l * stack[t, l]. alpha has L elements.
template <typename T>
FusionOutput<T> global_fuse(Var<T> stack, Var<T> alpha);

// Copies the final layer; weights are an exact one-hot at layer L.
template <typename T>
FusionOutput<T> last_layer_fuse(Var<T> stack);

// Per token: rows [c; h_t^1 .. h_t^L] + P through one transformer block,
// alpha_t = softmax(W_a u_t^0 + b_a), vectors[t] = sum_l alpha_t^l h_t^l.
template <typename T>
FusionOutput<T> tokenwise_fuse(const BoundParams<T>& params, Var<T> stack, std::size_t heads);

// Dispatches on config.fusion_mode. `stack` is [T x L x d].
template <typename T>
FusionOutput<T> fuse(const BoundParams<T>& params, Var<T> stack, const RunConfig& config);

// Tape-free evaluation of fuse().
template <typename T>
FusedSequence<T> fuse_values(const ParameterSet<T>& params, const Tensor<T>& stack,
                             const RunConfig& config);

}  // namespace lfuse
