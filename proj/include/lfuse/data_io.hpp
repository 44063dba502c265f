#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lfuse/bridge.hpp"

namespace lfuse {

struct InstructionExample {
  std::string source;
  std::string target;
  std::string lang;      // empty when absent
  std::size_t line = 0;  // 1-based line in the originating file
};

// One JSON object per line with keys `source`, `target` and optional `lang`.
// Blank lines are skipped. Errors name `origin:line`.
std::vector<InstructionExample> parse_jsonl(std::string_view text,
                                            const std::string& origin = "<jsonl>");
std::vector<InstructionExample> load_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<InstructionExample>& examples);
void save_jsonl(const std::filesystem::path& path, const std::vector<InstructionExample>& examples);

enum class ToyTask { kCopy, kTagmap, kXnliLike };
ToyTask parse_toy_task(std::string_view name);
std::string_view to_string(ToyTask task);

// Labels the xnli-like task emits, in scoring order.
std::vector<std::string> xnli_labels();

// Deterministic synthetic examples over the builtin vocabulary's content
// words. With `shifted` every source word is mapped through shift_script,
// while targets stay unchanged.
//   copy:      four source words, target = the last one
//   tagmap:    target = tag of the first source word
//   xnli-like: "premise | hypothesis" where one cue word in the hypothesis
//              decides the label (also/maybe/not)
std::vector<InstructionExample> gen_toy_task(ToyTask task, std::size_t n, std::uint64_t seed,
                                             const Vocabulary& vocab, bool shifted = false);

// Tokenizes and encodes every example through `encoder`.
template <typename T>
std::vector<EncodedExample<T>> encode_dataset(const std::vector<InstructionExample>& examples,
                                              const Vocabulary& vocab,
                                              const FrozenEncoder<T>& encoder);

// LFHS hidden-state container: "LFHS", u32 version, u32 N, L, d, then per
// example u32 T and T*L*d float32, all little-endian.
inline constexpr std::uint32_t kHiddenStateVersion = 1;

template <typename T>
std::string encode_hidden_states(const std::vector<LayerStack<T>>& stacks);
template <typename T>
std::vector<LayerStack<T>> decode_hidden_states(std::string_view bytes);
template <typename T>
void export_hidden_states(const std::filesystem::path& path,
                          const std::vector<LayerStack<T>>& stacks);
template <typename T>
std::vector<LayerStack<T>> import_hidden_states(const std::filesystem::path& path);

// LFCK checkpoint: "LFCK", u32 version, u32 header length, header text
// (`key = value` lines: config echo plus vocab fingerprint), u32 tensor
// count, then per tensor u32 name length, name, u32 rank, u32 dims, float32
// data. Tensors are sorted by name.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string header;
  std::map<std::string, std::string> fields;
  std::map<std::string, Tensor<float>> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const BridgeModel<T>& model, const Vocabulary& vocab);
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Header config overlaid on `base` (non-architecture keys of `base` such as
// the training regimen are replaced too).
RunConfig checkpoint_config(const Checkpoint& checkpoint, RunConfig base = {});

// Throws CompatibilityError listing every architecture key (and the vocab
// fingerprint) on which the checkpoint and `config` disagree.
void check_compatible(const Checkpoint& checkpoint, const RunConfig& config,
                      const Vocabulary& vocab);

// Copies checkpoint tensors into the model after check_compatible. Every
// trainable tensor must be present exactly once.
template <typename T>
void restore_trainable(BridgeModel<T>& model, const Checkpoint& checkpoint,
                       const Vocabulary& vocab);

// Raw native-precision bytes of a parameter set in name order; used to prove
// that frozen tensors never change.
template <typename T>
std::string parameter_bytes(const ParameterSet<T>& params);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lfuse
