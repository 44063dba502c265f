#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lfuse/fusion.hpp"
#include "lfuse/toy_stack.hpp"

namespace lfuse {

// One tokenized training/eval example with its cached encoder stack.
template <typename T>
struct EncodedExample {
  std::shared_ptr<const LayerStack<T>> stack;  // [T x L x d]
  TokenSequence target;
  std::string lang;
  std::size_t line = 0;  // source line in the JSONL file, 1-based
};

// Frozen encoder and decoder plus the trainable fusion + projection set.
// Copies share the frozen backbones.
template <typename T>
class BridgeModel {
 public:
  // Builds backbones from config.backbone_seed and initialises the trainable
  // tensors from config.seed.
  BridgeModel(const RunConfig& config, const Vocabulary& vocab);
  BridgeModel(const RunConfig& config, std::shared_ptr<const FrozenEncoder<T>> encoder,
              std::shared_ptr<const FrozenDecoderLM<T>> decoder);

  const RunConfig& config() const { return config_; }
  const FrozenEncoder<T>& encoder() const { return *encoder_; }
  const FrozenDecoderLM<T>& decoder() const { return *decoder_; }
  std::shared_ptr<const FrozenEncoder<T>> shared_encoder() const { return encoder_; }
  std::shared_ptr<const FrozenDecoderLM<T>> shared_decoder() const { return decoder_; }

  // Exactly the fusion and projection tensors.
  ParameterSet<T>& trainable() { return trainable_; }
  const ParameterSet<T>& trainable() const { return trainable_; }

 private:
  void init_trainable();

  RunConfig config_;
  std::shared_ptr<const FrozenEncoder<T>> encoder_;
  std::shared_ptr<const FrozenDecoderLM<T>> decoder_;
  ParameterSet<T> trainable_;
};

// z_t = W_p h_t + b_p
template <typename T>
Var<T> project(Var<T> fused, Var<T> weight, Var<T> bias);

// Loss and intermediates of one example recorded on a caller-owned tape.
template <typename T>
struct BridgeGraph {
  Var<T> loss;
  Var<T> logits;  // [K x V]
  FusionOutput<T> fusion;
  Var<T> prefix;  // Z, [T x d']
};

template <typename T>
BridgeGraph<T> bridge_graph(const BridgeModel<T>& model, const BoundParams<T>& params,
                            Var<T> stack, const TokenSequence& target);

template <typename T>
struct ForwardResult {
  T loss = 0;
  std::vector<T> position_losses;  // -log p(y_k | y_<k, Z)
  Tensor<T> weights;               // layer weights, [L] or [T x L]
  NamedGradients<T> grads;         // empty unless requested
};

// Prefix-LM loss of `target` given the encoder stack of the source.
template <typename T>
ForwardResult<T> bridge_forward(const BridgeModel<T>& model, const LayerStack<T>& stack,
                                const TokenSequence& target, bool with_grads = false);

// Text-level convenience that tokenizes and encodes first.
template <typename T>
ForwardResult<T> bridge_forward(const BridgeModel<T>& model, const Vocabulary& vocab,
                                const std::string& source, const std::string& target,
                                bool with_grads = false);

template <typename T>
struct BatchResult {
  T loss = 0;               // mean of per-example losses
  std::vector<T> losses;    // in batch order
  NamedGradients<T> grads;  // gradient of the mean loss
};

// Per-example passes may run on `threads` workers; losses and gradients are
// always reduced in batch order, so the result does not depend on threads.
template <typename T>
BatchResult<T> batch_forward(const BridgeModel<T>& model,
                             std::span<const EncodedExample<T>* const> batch,
                             bool with_grads, std::size_t threads = 1);

}  // namespace lfuse
