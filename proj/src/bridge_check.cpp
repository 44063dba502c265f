#include "lfuse/bridge_check.hpp"

#include <algorithm>
#include <cmath>

#include "lfuse/gradcheck.hpp"

namespace lfuse {

double BridgeGradCheck::max_error() const {
  double m = 0;
  for (const auto& t : tensors) {
    if (!t.vanishing) m = std::max(m, t.rel_error);
  }
  return m;
}

bool BridgeGradCheck::passes(double rel_tol) const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [&](const TensorGradCheck& t) { return t.passes(rel_tol); });
}

RunConfig gradcheck_config() {
  RunConfig c;
  c.layers = 4;
  c.width = 8;
  c.decoder_width = 16;
  c.vocab_size = 32;
  c.max_len = 6;
  c.base_temp = 1.0;
  c.factor = 10.0;
  c.temp_init = 1e-2;
  c.precision = Precision::kF64;
  c.check_finite = true;
  return c;
}

BridgeGradCheck check_bridge_gradients(const RunConfig& config, const Vocabulary& vocab,
                                       std::uint64_t seed, double eps) {
  RunConfig c = config;
  c.seed = seed;
  BridgeModel<double> model(c, vocab);
  Rng rng(derive_seed(seed, 5));
  for (const auto& name : model.trainable().names()) {
    Tensor<double> t = model.trainable().get(name);
    // tau = base_temp + temp * factor must stay positive.
    const double scale = name == "fusion.temp" ? 0.01 * c.base_temp / c.factor : 0.3;
    for (double& v : t.data()) v += rng.normal() * scale;
    model.trainable().set(name, std::move(t));
  }

  const std::size_t max_src = std::min<std::size_t>(c.max_len, 6);
  const auto token = [&] {
    return static_cast<TokenId>(4 + rng.below(c.vocab_size - 4));
  };
  TokenSequence source(1 + rng.below(max_src)), target(1 + rng.below(3));
  std::generate(source.begin(), source.end(), token);
  std::generate(target.begin(), target.end(), token);
  const LayerStack<double> stack = model.encoder().encode(source);

  BridgeGradCheck out;
  out.mode = c.fusion_mode;
  out.source_len = source.size();
  out.target_len = target.size();
  const ForwardResult<double> analytic = bridge_forward(model, stack, target, true);
  for (const auto& name : model.trainable().names()) {
    BridgeModel<double> probe = model;
    const std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& p) {
      probe.trainable().set(name, p);
      return bridge_forward(probe, stack, target).loss;
    };
    const Tensor<double> numeric = finite_diff_grad(f, model.trainable().get(name), eps);
    auto it = analytic.grads.find(name);
    const Tensor<double> grad =
        it == analytic.grads.end() ? Tensor<double>(numeric.shape()) : it->second;
    TensorGradCheck check{name, numeric.numel(), relative_error(grad, numeric), 0, false};
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      diff += (grad[i] - numeric[i]) * (grad[i] - numeric[i]);
      na += grad[i] * grad[i];
      nn += numeric[i] * numeric[i];
    }
    check.abs_error = std::sqrt(diff);
    check.vanishing = std::sqrt(std::max(na, nn)) < kVanishingGradNorm;
    out.tensors.push_back(std::move(check));
  }
  return out;
}

}  // namespace lfuse
