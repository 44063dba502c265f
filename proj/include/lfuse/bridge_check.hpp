#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lfuse/bridge.hpp"

namespace lfuse {

// Gradient norms below this are indistinguishable from rounding noise in a
// central difference; such tensors are compared in absolute terms.
inline constexpr double kVanishingGradNorm = 1e-9;

struct TensorGradCheck {
  std::string name;
  std::size_t numel = 0;
  double rel_error = 0;  // ||analytic - numeric|| / max of the two norms
  double abs_error = 0;  // ||analytic - numeric||
  // Both norms below kVanishingGradNorm, e.g. the attention key bias, which
  // shifts every score of a softmax row equally and has a zero gradient.
  bool vanishing = false;

  bool passes(double rel_tol) const {
    return vanishing ? abs_error <= kVanishingGradNorm : rel_error <= rel_tol;
  }
};

struct BridgeGradCheck {
  FusionMode mode = FusionMode::kGlobal;
  std::size_t source_len = 0, target_len = 0;
  std::vector<TensorGradCheck> tensors;
  // Largest relative error over non-vanishing tensors.
  double max_error() const;
  bool passes(double rel_tol) const;
};

// Small f64 dimensions for gradient checks: L=4, d=8, d'=16, V=32, T<=6.
// The temperature constants are moderate (tau near 1) so the layer softmax
// is not saturated, where central differences lose all precision.
RunConfig gradcheck_config();

// eps = 1e-4 balances truncation (eps^2) against cancellation (1/eps) for
// f64 losses of order one.
// Compares backward() against central differences for every trainable
// tensor of a bridge built from `config` with trainable seed `seed`, on a
// random example (source length 1..max_T capped at 6, target 1..3 tokens).
// Trainable tensors get a small random offset first so no check happens at
// a special point such as zero biases.
BridgeGradCheck check_bridge_gradients(const RunConfig& config, const Vocabulary& vocab,
                                       std::uint64_t seed, double eps = 1e-4);

}  // namespace lfuse
