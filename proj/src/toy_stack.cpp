#include "lfuse/toy_stack.hpp"

#include <fmt/format.h>

#include <cmath>

#include "lfuse/ops.hpp"
#include "lfuse/rng.hpp"
#include "lfuse/transformer.hpp"

namespace lfuse {
namespace {

constexpr double kEncoderStd = 0.02;

std::string block_prefix(const char* owner, std::size_t i) {
  return fmt::format("{}.block{}.", owner, i);
}

}  // namespace

template <typename T>
FrozenEncoder<T>::FrozenEncoder(const RunConfig& config, const Vocabulary& vocab)
    : blocks_(config.layers),
      width_(config.width),
      heads_(config.encoder_heads),
      max_len_(config.max_len),
      fused_layers_(config.fused_layers()),
      include_embedding_(config.include_embedding_layer) {
  if (vocab.size() != config.vocab_size) {
    throw ConfigError(fmt::format("V: config says {} but the vocabulary has {} tokens",
                                  config.vocab_size, vocab.size()));
  }
  Rng rng(derive_seed(config.backbone_seed, 0));
  Tensor<T> embed = rng.normal_tensor<T>({config.vocab_size, width_}, kEncoderStd);
  const double rho = config.script_alignment;
  const double rest = std::sqrt(1.0 - rho * rho);
  for (const auto& [plain, shifted] : vocab.script_pairs()) {
    for (std::size_t j = 0; j < width_; ++j) {
      embed.at(shifted, j) =
          static_cast<T>(rho * embed.at(plain, j) + rest * embed.at(shifted, j));
    }
  }
  params_.add("encoder.embed", std::move(embed));
  params_.add("encoder.pos", rng.normal_tensor<T>({max_len_, width_}, kEncoderStd));
  for (std::size_t i = 0; i < blocks_; ++i) {
    init_block(params_, block_prefix("encoder", i), BlockShape{width_, 4 * width_}, rng,
               kEncoderStd);
  }
}

template <typename T>
LayerStack<T> FrozenEncoder<T>::encode(const TokenSequence& ids) const {
  if (ids.empty()) throw ContractError("encode: empty token sequence");
  if (ids.size() > max_len_) {
    throw ContractError(fmt::format("encode: {} tokens exceed max_T = {}", ids.size(), max_len_));
  }
  Tape<T> tape(TapeOptions{.check_finite = false, .record = false});
  const BoundParams<T> p = params_.bind(tape, false);
  const std::size_t n = ids.size();
  Var<T> x = add(embedding(p["encoder.embed"], ids), slice_rows(p["encoder.pos"], 0, n));

  std::vector<const Tensor<T>*> layers;
  layers.reserve(fused_layers_);
  if (include_embedding_) layers.push_back(&x.value());
  for (std::size_t i = 0; i < blocks_; ++i) {
    x = block_forward(bind_block(p, block_prefix("encoder", i)), x, heads_, n, false);
    layers.push_back(&x.value());
  }
  LayerStack<T> stack({n, fused_layers_, width_});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t l = 0; l < fused_layers_; ++l) {
      std::copy_n(layers[l]->ptr() + t * width_, width_,
                  stack.ptr() + (t * fused_layers_ + l) * width_);
    }
  }
  return stack;
}

template <typename T>
FrozenDecoderLM<T>::FrozenDecoderLM(const RunConfig& config)
    : blocks_(config.decoder_blocks),
      width_(config.decoder_width),
      heads_(config.decoder_heads),
      vocab_size_(config.vocab_size),
      max_positions_(2 * config.max_len) {
  Rng rng(derive_seed(config.backbone_seed, 1));
  const double std_in = 1.0 / std::sqrt(static_cast<double>(width_));
  params_.add("decoder.embed", rng.normal_tensor<T>({vocab_size_, width_}, std_in));
  params_.add("decoder.pos", rng.normal_tensor<T>({max_positions_, width_}, kEncoderStd));
  for (std::size_t i = 0; i < blocks_; ++i) {
    // Unit-gain init so the prefix can steer the output, unlike the
    // small-init encoder.
    const std::string prefix = block_prefix("decoder", i);
    init_block(params_, prefix, BlockShape{width_, 4 * width_}, rng, std_in);
    Tensor<T> w2 = params_.get(prefix + "ff.w2");
    for (T& v : w2.data()) v *= static_cast<T>(0.5);
    params_.set(prefix + "ff.w2", std::move(w2));
  }
  params_.add("decoder.final_ln.gain", Tensor<T>::filled({width_}, T(1)));
  params_.add("decoder.final_ln.bias", Tensor<T>({width_}));
}

template <typename T>
Var<T> FrozenDecoderLM<T>::logits(Var<T> z, std::span<const TokenId> inputs) const {
  const Tensor<T>& zv = z.value();
  if (zv.rank() != 2 || zv.dim(1) != width_) {
    throw DimensionError(fmt::format("decoder: prefix width must be d' = {}, got {}", width_,
                                     shape_string(zv.shape())));
  }
  if (inputs.empty()) throw ContractError("decoder: no target positions");
  const std::size_t prefix = zv.dim(0), k = inputs.size(), total = prefix + k;
  if (total > max_positions_) {
    throw ContractError(fmt::format("decoder: {} positions exceed the {} supported", total,
                                    max_positions_));
  }
  Tape<T>& tape = *z.tape();
  const BoundParams<T> p = params_.bind(tape, false);
  const Var<T> embed = p["decoder.embed"];
  const Var<T> parts[] = {z, embedding(embed, inputs)};
  Var<T> x = add(concat_rows<T>(parts), slice_rows(p["decoder.pos"], 0, total));
  for (std::size_t i = 0; i < blocks_; ++i) {
    x = block_forward(bind_block(p, block_prefix("decoder", i)), x, heads_, total, true);
  }
  const Var<T> tail = slice_rows(x, prefix, total);
  const Var<T> h = layer_norm(tail, p["decoder.final_ln.gain"], p["decoder.final_ln.bias"]);
  return matmul_nt(h, embed);
}

TokenSequence shift_right(const TokenSequence& target) {
  TokenSequence out;
  out.reserve(target.size());
  out.push_back(kBosId);
  if (!target.empty()) out.insert(out.end(), target.begin(), target.end() - 1);
  return out;
}

template <typename T>
Tensor<T> decoder_logits(const Tensor<T>& z, const TokenSequence& target_prefix,
                         const FrozenDecoderLM<T>& decoder) {
  Tape<T> tape(TapeOptions{.check_finite = false, .record = false});
  return decoder.logits(tape.constant(z), target_prefix).value();
}

template class FrozenEncoder<float>;
template class FrozenEncoder<double>;
template class FrozenDecoderLM<float>;
template class FrozenDecoderLM<double>;
template Tensor<float> decoder_logits(const Tensor<float>&, const TokenSequence&,
                                      const FrozenDecoderLM<float>&);
template Tensor<double> decoder_logits(const Tensor<double>&, const TokenSequence&,
                                       const FrozenDecoderLM<double>&);

}  // namespace lfuse
