#include "lfuse/bridge.hpp"

#include <fmt/format.h>

#include <cmath>
#include <thread>

#include "lfuse/transformer.hpp"

namespace lfuse {

template <typename T>
BridgeModel<T>::BridgeModel(const RunConfig& config, const Vocabulary& vocab)
    : BridgeModel(config, std::make_shared<const FrozenEncoder<T>>(config, vocab),
                  std::make_shared<const FrozenDecoderLM<T>>(config)) {}

template <typename T>
BridgeModel<T>::BridgeModel(const RunConfig& config,
                            std::shared_ptr<const FrozenEncoder<T>> encoder,
                            std::shared_ptr<const FrozenDecoderLM<T>> decoder)
    : config_(config), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  config_.validate();
  if (encoder_->width() != config_.width || encoder_->fused_layers() != config_.fused_layers() ||
      decoder_->width() != config_.decoder_width || decoder_->vocab_size() != config_.vocab_size) {
    throw ConfigError("bridge: backbone dimensions do not match the config");
  }
  init_trainable();
}

template <typename T>
void BridgeModel<T>::init_trainable() {
  Rng rng(derive_seed(config_.seed, 3));
  init_fusion_params(trainable_, config_, rng);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config_.width));
  trainable_.add("proj.weight",
                 rng.normal_tensor<T>({config_.decoder_width, config_.width}, proj_std));
  trainable_.add("proj.bias", Tensor<T>({config_.decoder_width}));
}

template <typename T>
Var<T> project(Var<T> fused, Var<T> weight, Var<T> bias) {
  const Tensor<T>& w = weight.value();
  if (w.rank() != 2 || fused.value().cols() != w.dim(1) || bias.value().numel() != w.dim(0)) {
    throw DimensionError(fmt::format("project: fused {} with W_p {} and b_p {}",
                                     shape_string(fused.shape()), shape_string(w.shape()),
                                     shape_string(bias.shape())));
  }
  return linear(fused, weight, bias);
}

template <typename T>
BridgeGraph<T> bridge_graph(const BridgeModel<T>& model, const BoundParams<T>& params,
                            Var<T> stack, const TokenSequence& target) {
  if (target.empty()) throw ContractError("bridge_forward: empty target");
  const FusionOutput<T> fused = fuse(params, stack, model.config());
  const Var<T> z = project(fused.vectors, params["proj.weight"], params["proj.bias"]);
  const TokenSequence inputs = shift_right(target);
  const Var<T> logits = model.decoder().logits(z, inputs);
  const Var<T> loss = cross_entropy(logits, target, model.config().loss_reduction);
  return {loss, logits, fused, z};
}

template <typename T>
ForwardResult<T> bridge_forward(const BridgeModel<T>& model, const LayerStack<T>& stack,
                                const TokenSequence& target, bool with_grads) {
  Tape<T> tape(TapeOptions{.check_finite = model.config().check_finite, .record = with_grads});
  const BoundParams<T> params = model.trainable().bind(tape, with_grads);
  const BridgeGraph<T> g = bridge_graph(model, params, tape.constant(stack), target);
  ForwardResult<T> out;
  out.loss = g.loss.value().item();
  out.position_losses = row_nll(g.logits.value(), target);
  out.weights = g.fusion.weights.value();
  if (with_grads) out.grads = params.name_gradients(tape.backward(g.loss));
  return out;
}

template <typename T>
ForwardResult<T> bridge_forward(const BridgeModel<T>& model, const Vocabulary& vocab,
                                const std::string& source, const std::string& target,
                                bool with_grads) {
  const LayerStack<T> stack = model.encoder().encode(tokenize(source, vocab));
  return bridge_forward(model, stack, tokenize(target, vocab), with_grads);
}

namespace {

template <typename T>
ForwardResult<T> example_pass(const BridgeModel<T>& model, const EncodedExample<T>& ex,
                              bool with_grads) {
  Tape<T> tape(TapeOptions{.check_finite = model.config().check_finite, .record = with_grads});
  const BoundParams<T> params = model.trainable().bind(tape, with_grads);
  const BridgeGraph<T> g = bridge_graph(model, params, tape.constant(ex.stack), ex.target);
  ForwardResult<T> out;
  out.loss = g.loss.value().item();
  if (with_grads) out.grads = params.name_gradients(tape.backward(g.loss));
  return out;
}

}  // namespace

template <typename T>
BatchResult<T> batch_forward(const BridgeModel<T>& model,
                             std::span<const EncodedExample<T>* const> batch, bool with_grads,
                             std::size_t threads) {
  if (batch.empty()) throw ContractError("batch_forward: empty batch");
  std::vector<ForwardResult<T>> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto run = [&](std::size_t i) {
    try {
      results[i] = example_pass(model, *batch[i], with_grads);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), batch.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BatchResult<T> out;
  const T inv = T(1) / static_cast<T>(batch.size());
  T total = 0;
  for (auto& r : results) {
    out.losses.push_back(r.loss);
    total += r.loss;
    for (auto& [name, g] : r.grads) {
      auto it = out.grads.find(name);
      if (it == out.grads.end()) {
        out.grads.emplace(name, std::move(g));
      } else {
        T* dst = it->second.ptr();
        for (std::size_t j = 0; j < g.numel(); ++j) dst[j] += g[j];
      }
    }
  }
  out.loss = total * inv;
  for (auto& [_, g] : out.grads) {
    for (T& v : g.data()) v *= inv;
  }
  return out;
}

template class BridgeModel<float>;
template class BridgeModel<double>;

#define LFUSE_INSTANTIATE_BRIDGE(T)                                                           \
  template Var<T> project(Var<T>, Var<T>, Var<T>);                                            \
  template BridgeGraph<T> bridge_graph(const BridgeModel<T>&, const BoundParams<T>&, Var<T>,  \
                                       const TokenSequence&);                                 \
  template ForwardResult<T> bridge_forward(const BridgeModel<T>&, const LayerStack<T>&,       \
                                           const TokenSequence&, bool);                       \
  template ForwardResult<T> bridge_forward(const BridgeModel<T>&, const Vocabulary&,          \
                                           const std::string&, const std::string&, bool);     \
  template BatchResult<T> batch_forward(const BridgeModel<T>&,                                \
                                        std::span<const EncodedExample<T>* const>, bool,      \
                                        std::size_t);

LFUSE_INSTANTIATE_BRIDGE(float)
LFUSE_INSTANTIATE_BRIDGE(double)

}  // namespace lfuse
