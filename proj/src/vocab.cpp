#include "lfuse/vocab.hpp"

#include <fmt/format.h>

#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "lfuse/error.hpp"

namespace lfuse {
namespace {

constexpr std::array<std::string_view, 40> kWords = {
    "also",  "maybe", "not",   "cat",   "dog",   "sun",   "moon",  "tree",
    "river", "stone", "bird",  "fish",  "road",  "house", "king",  "queen",
    "city",  "lake",  "hill",  "rain",  "snow",  "wind",  "fire",  "gold",
    "book",  "door",  "ship",  "star",  "wolf",  "bear",  "apple", "bread",
    "milk",  "salt",  "iron",  "wood",  "glass", "paper", "rock",  "sand",
};

bool is_byte_token_form(std::string_view s) {
  return s.size() == 6 && s.substr(0, 3) == "<0x" && s.back() == '>';
}

std::string byte_token(unsigned char b) { return fmt::format("<0x{:02X}>", b); }

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) {
    throw ConfigError("vocabulary needs at least the 4 reserved tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ConfigError(fmt::format("vocabulary token '{}' appears twice (id {})", tokens_[i], i));
    }
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open vocabulary file '{}'", path.string()));
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write vocabulary file '{}'", path.string()));
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
}

Vocabulary Vocabulary::builtin(std::size_t size) {
  std::vector<std::string> tokens = {"<pad>",      "<unk>",   "<bos>",         "<eos>",
                                     "|",          "entailment", "neutral", "contradiction",
                                     "tag_a",      "tag_b",   "tag_c",         "tag_d"};
  constexpr std::size_t kMinPairs = 6;
  if (size < tokens.size() + 2 * kMinPairs) {
    throw ConfigError(fmt::format("V: the built-in vocabulary needs at least {} tokens, got {}",
                                  tokens.size() + 2 * kMinPairs, size));
  }
  const std::size_t pairs = (size - tokens.size()) / 2;
  for (std::size_t i = 0; i < pairs; ++i) {
    std::string word = i < kWords.size() ? std::string(kWords[i]) : fmt::format("w{}", i);
    tokens.push_back(word);
    tokens.push_back(shift_script(word));
  }
  if (tokens.size() < size) tokens.push_back("<spare>");
  return Vocabulary(std::move(tokens));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError(fmt::format("token id {} out of range for vocabulary of {}", id, size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto found = find(token)) return *found;
  throw IndexError(fmt::format("token '{}' is not in the vocabulary", token));
}

std::vector<std::pair<TokenId, TokenId>> Vocabulary::script_pairs() const {
  std::vector<std::pair<TokenId, TokenId>> out;
  for (std::size_t i = 4; i < tokens_.size(); ++i) {
    const std::string& t = tokens_[i];
    if (t.empty() || !std::islower(static_cast<unsigned char>(t[0]))) continue;
    if (auto twin = find(shift_script(t)); twin && *twin != static_cast<TokenId>(i)) {
      out.emplace_back(static_cast<TokenId>(i), *twin);
    }
  }
  return out;
}

std::vector<std::string> Vocabulary::content_words() const {
  std::vector<std::string> out;
  for (const auto& [plain, _] : script_pairs()) out.push_back(tokens_[plain]);
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= '\n';
    h *= 1099511628211ull;
  }
  return h;
}

std::string shift_script(std::string_view word) {
  std::string out(word);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (std::islower(u)) c = static_cast<char>(std::toupper(u));
    else if (std::isupper(u)) c = static_cast<char>(std::tolower(u));
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  std::istringstream in{std::string(text)};
  TokenSequence out;
  std::string word;
  while (in >> word) {
    if (auto id = vocab.find(word)) {
      out.push_back(*id);
      continue;
    }
    TokenSequence bytes;
    for (unsigned char b : word) {
      auto id = vocab.find(byte_token(b));
      if (!id) {
        bytes.clear();
        break;
      }
      bytes.push_back(*id);
    }
    if (bytes.empty()) {
      out.push_back(kUnkId);
    } else {
      out.insert(out.end(), bytes.begin(), bytes.end());
    }
  }
  if (out.empty()) throw ContractError("tokenize: input text is empty");
  return out;
}

std::string detokenize(const TokenSequence& ids, const Vocabulary& vocab) {
  std::string out;
  bool in_bytes = false;
  for (TokenId id : ids) {
    const std::string& t = vocab.token(id);
    if (is_byte_token_form(t)) {
      if (!in_bytes && !out.empty()) out += ' ';
      out += static_cast<char>(std::stoi(t.substr(3, 2), nullptr, 16));
      in_bytes = true;
      continue;
    }
    if (!out.empty()) out += ' ';
    out += t;
    in_bytes = false;
  }
  return out;
}

}  // namespace lfuse
