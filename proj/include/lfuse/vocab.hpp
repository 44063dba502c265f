#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lfuse {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;

// Token list where line number (0-based) is the id. Ids 0-3 are reserved for
// PAD, UNK, BOS and EOS.
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  // Vocabulary file: UTF-8, one token per line.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // The toy-task vocabulary of exactly `size` tokens: reserved ids, the
  // separator, three NLI labels, four tags, then pairs of content words in
  // their plain and shifted-script spelling.
  static Vocabulary builtin(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;  // throws IndexError if absent

  // (plain, shifted-script) id pairs for every word whose shifted spelling is
  // also in the vocabulary.
  std::vector<std::pair<TokenId, TokenId>> script_pairs() const;

  // Content words that have a shifted-script twin (plain spelling only).
  std::vector<std::string> content_words() const;

  // FNV-1a over the newline-joined token list.
  std::uint64_t fingerprint() const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Bijection on ASCII words used to emulate a second script: lower-case
// letters map to upper case and vice versa.
std::string shift_script(std::string_view word);

// Whitespace segmentation with byte fallback: a word missing from the
// vocabulary becomes its `<0xNN>` byte tokens when all of them exist, and a
// single UNK otherwise. Throws ContractError on empty input.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

// Inverse of tokenize for in-vocabulary text (words joined by one space).
std::string detokenize(const TokenSequence& ids, const Vocabulary& vocab);

}  // namespace lfuse
