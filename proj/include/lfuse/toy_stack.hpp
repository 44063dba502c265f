#pragma once

#include <span>

#include "lfuse/config.hpp"
#include "lfuse/params.hpp"
#include "lfuse/vocab.hpp"

namespace lfuse {

// Hidden states of every encoder layer for one sequence: [T x L x d].
template <typename T>
using LayerStack = Tensor<T>;

// Seeded stand-in for a multilingual encoder: token + position embeddings
// followed by L pre-norm transformer blocks. Embeddings of cross-script word
// pairs are correlated (config.script_alignment) to mimic a shared
// multilingual space. Immutable after construction.
template <typename T>
class FrozenEncoder {
 public:
  FrozenEncoder(const RunConfig& config, const Vocabulary& vocab);

  // All block outputs per token, prefixed by the embedding output when
  // include_embedding_layer is set. Throws ContractError for empty input or
  // more than max_T tokens.
  LayerStack<T> encode(const TokenSequence& ids) const;

  std::size_t fused_layers() const { return fused_layers_; }
  std::size_t width() const { return width_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  ParameterSet<T> params_;
  std::size_t blocks_, width_, heads_, max_len_, fused_layers_;
  bool include_embedding_;
};

// Seeded stand-in for the decoder LM: a small causal transformer whose input
// is the soft prefix Z followed by target embeddings, with an output head
// tied to the input embedding. Immutable after construction.
template <typename T>
class FrozenDecoderLM {
 public:
  explicit FrozenDecoderLM(const RunConfig& config);

  // Next-token logits [K x V] for the K `inputs` positions that follow the
  // prefix rows of `z` ([T x d']). Gradients reach `z` only.
  Var<T> logits(Var<T> z, std::span<const TokenId> inputs) const;

  std::size_t width() const { return width_; }
  std::size_t vocab_size() const { return vocab_size_; }
  const ParameterSet<T>& parameters() const { return params_; }

 private:
  ParameterSet<T> params_;
  std::size_t blocks_, width_, heads_, vocab_size_, max_positions_;
};

// [BOS, y_1, ..., y_{K-1}]: decoder inputs for teacher-forced target y.
TokenSequence shift_right(const TokenSequence& target);

// Non-tape convenience: logits of the frozen decoder for a fixed Z.
template <typename T>
Tensor<T> decoder_logits(const Tensor<T>& z, const TokenSequence& target_prefix,
                         const FrozenDecoderLM<T>& decoder);

}  // namespace lfuse
