#include "lfuse/data_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <bit>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace lfuse {
namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kHiddenMagic = "LFHS";
constexpr std::string_view kCheckpointMagic = "LFCK";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw FormatError(fmt::format("{} {} does not fit in u32", what, v));
  return static_cast<std::uint32_t>(v);
}

// Bounds-checked little-endian reader over an in-memory file.
class Reader {
 public:
  Reader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw LengthError(fmt::format("{}: truncated at byte {} (needed {} more, {} left)", what_,
                                    pos_, n, bytes_.size() - pos_));
    }
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string required_string(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(fmt::format("{}: missing key '{}'", where, key));
  if (!it->is_string()) throw SchemaError(fmt::format("{}: '{}' must be a string", where, key));
  std::string value = it->get<std::string>();
  if (trim(value).empty()) throw SchemaError(fmt::format("{}: '{}' is empty", where, key));
  return value;
}

std::map<std::string, std::string> parse_header(std::string_view header) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(header)};
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed header line '" + line + "'");
    out[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("error reading '{}'", path.string()));
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

std::vector<InstructionExample> parse_jsonl(std::string_view text, const std::string& origin) {
  std::vector<InstructionExample> out;
  std::size_t lineno = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = fmt::format("{}:{}", origin, lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(fmt::format("{}: malformed JSON ({})", where, e.what()));
    }
    if (!obj.is_object()) throw SchemaError(fmt::format("{}: expected a JSON object", where));
    InstructionExample ex;
    ex.source = required_string(obj, "source", where);
    ex.target = required_string(obj, "target", where);
    if (auto it = obj.find("lang"); it != obj.end()) {
      if (!it->is_string()) throw SchemaError(fmt::format("{}: 'lang' must be a string", where));
      ex.lang = it->get<std::string>();
    }
    ex.line = lineno;
    out.push_back(std::move(ex));
  }
  if (out.empty()) spdlog::warn("{}: no examples", origin);
  return out;
}

std::vector<InstructionExample> load_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path), path.string());
}

std::string to_jsonl(const std::vector<InstructionExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    json obj = {{"source", ex.source}, {"target", ex.target}};
    if (!ex.lang.empty()) obj["lang"] = ex.lang;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path,
                const std::vector<InstructionExample>& examples) {
  write_file(path, to_jsonl(examples));
}

ToyTask parse_toy_task(std::string_view name) {
  if (name == "copy") return ToyTask::kCopy;
  if (name == "tagmap") return ToyTask::kTagmap;
  if (name == "xnli-like") return ToyTask::kXnliLike;
  throw ConfigError(fmt::format("task: expected copy, tagmap or xnli-like, got '{}'", name));
}

std::string_view to_string(ToyTask task) {
  switch (task) {
    case ToyTask::kCopy:
      return "copy";
    case ToyTask::kTagmap:
      return "tagmap";
    case ToyTask::kXnliLike:
      return "xnli-like";
  }
  return "?";
}

std::vector<std::string> xnli_labels() { return {"entailment", "neutral", "contradiction"}; }

std::vector<InstructionExample> gen_toy_task(ToyTask task, std::size_t n, std::uint64_t seed,
                                             const Vocabulary& vocab, bool shifted) {
  if (n == 0) throw ContractError("gen_toy_task: n must be >= 1");
  static const std::array<std::string, 3> cues = {"also", "maybe", "not"};
  static const std::array<std::string, 4> tags = {"tag_a", "tag_b", "tag_c", "tag_d"};
  std::vector<std::string> words;
  for (auto& w : vocab.content_words()) {
    if (std::find(cues.begin(), cues.end(), w) == cues.end()) words.push_back(std::move(w));
  }
  if (words.size() < 4) {
    throw ConfigError(fmt::format("gen_toy_task: vocabulary has only {} content words",
                                  words.size()));
  }
  auto require = [&](const auto& list) {
    for (const auto& w : list) {
      if (!vocab.find(w)) throw ConfigError("gen_toy_task: vocabulary lacks '" + w + "'");
    }
  };
  const std::vector<std::string> labels = xnli_labels();
  if (task == ToyTask::kTagmap) require(tags);
  if (task == ToyTask::kXnliLike) {
    require(cues);
    require(labels);
    if (!vocab.find("|")) throw ConfigError("gen_toy_task: vocabulary lacks '|'");
  }

  Rng rng(derive_seed(seed, 4));
  auto pick = [&](std::size_t count) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(words[rng.below(words.size())]);
    return out;
  };
  auto join = [&](const std::vector<std::string>& ws) {
    std::string s;
    for (const auto& w : ws) {
      if (!s.empty()) s += ' ';
      s += shifted ? shift_script(w) : w;
    }
    return s;
  };

  std::vector<InstructionExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    InstructionExample ex;
    ex.lang = shifted ? "shifted" : "en";
    ex.line = i + 1;
    switch (task) {
      case ToyTask::kCopy: {
        const auto src = pick(4);
        ex.source = join(src);
        ex.target = src.back();
        break;
      }
      case ToyTask::kTagmap: {
        const auto src = pick(3 + rng.below(3));
        const auto idx = std::find(words.begin(), words.end(), src.front()) - words.begin();
        ex.source = join(src);
        ex.target = tags[static_cast<std::size_t>(idx) % tags.size()];
        break;
      }
      case ToyTask::kXnliLike: {
        const std::size_t label = rng.below(3);
        auto src = pick(3 + rng.below(3));
        src.push_back("|");
        auto hyp = pick(2 + rng.below(2));
        hyp.insert(hyp.begin() + static_cast<std::ptrdiff_t>(rng.below(hyp.size() + 1)),
                   cues[label]);
        src.insert(src.end(), hyp.begin(), hyp.end());
        ex.source = join(src);
        ex.target = labels[label];
        break;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
std::vector<EncodedExample<T>> encode_dataset(const std::vector<InstructionExample>& examples,
                                              const Vocabulary& vocab,
                                              const FrozenEncoder<T>& encoder) {
  std::vector<EncodedExample<T>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    try {
      EncodedExample<T> e;
      e.stack = std::make_shared<const LayerStack<T>>(encoder.encode(tokenize(ex.source, vocab)));
      e.target = tokenize(ex.target, vocab);
      e.lang = ex.lang;
      e.line = ex.line;
      out.push_back(std::move(e));
    } catch (const ContractError& err) {
      throw DataError(fmt::format("line {}: {}", ex.line, err.what()));
    }
  }
  return out;
}

template <typename T>
std::string encode_hidden_states(const std::vector<LayerStack<T>>& stacks) {
  std::size_t layers = 0, width = 0;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    if (s.rank() != 3) {
      throw DimensionError(fmt::format("hidden states: stack {} has shape {}, expected [T x L x d]",
                                       i, shape_string(s.shape())));
    }
    if (i == 0) {
      layers = s.dim(1);
      width = s.dim(2);
    } else if (s.dim(1) != layers || s.dim(2) != width) {
      throw DimensionError(fmt::format("hidden states: stack {} is {} but stack 0 has L={}, d={}",
                                       i, shape_string(s.shape()), layers, width));
    }
  }
  std::string out(kHiddenMagic);
  put_u32(out, kHiddenStateVersion);
  put_u32(out, to_u32(stacks.size(), "N"));
  put_u32(out, to_u32(layers, "L"));
  put_u32(out, to_u32(width, "d"));
  for (const auto& s : stacks) {
    put_u32(out, to_u32(s.dim(0), "T"));
    for (T v : s.data()) put_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
std::vector<LayerStack<T>> decode_hidden_states(std::string_view bytes) {
  Reader in(bytes, "hidden states");
  if (bytes.size() < 4 || bytes.substr(0, 4) != kHiddenMagic) {
    throw FormatError("hidden states: bad magic (expected LFHS)");
  }
  in.take(4);
  if (const auto v = in.u32(); v != kHiddenStateVersion) {
    throw FormatError(fmt::format("hidden states: unsupported version {}", v));
  }
  const std::uint32_t n = in.u32(), layers = in.u32(), width = in.u32();
  if (n > 0 && (layers == 0 || width == 0)) throw FormatError("hidden states: zero L or d");
  std::vector<LayerStack<T>> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = in.u32();
    if (len == 0) throw FormatError(fmt::format("hidden states: example {} has T = 0", i));
    const std::size_t count = std::size_t{len} * layers * width;
    in.need(count * 4);
    LayerStack<T> s({len, layers, width});
    for (std::size_t j = 0; j < count; ++j) s[j] = static_cast<T>(in.f32());
    out.push_back(std::move(s));
  }
  if (!in.done()) {
    throw FormatError(fmt::format("hidden states: {} trailing bytes", bytes.size() - in.pos()));
  }
  return out;
}

template <typename T>
void export_hidden_states(const std::filesystem::path& path,
                          const std::vector<LayerStack<T>>& stacks) {
  write_file(path, encode_hidden_states(stacks));
}

template <typename T>
std::vector<LayerStack<T>> import_hidden_states(const std::filesystem::path& path) {
  try {
    return decode_hidden_states<T>(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

template <typename T>
Checkpoint make_checkpoint(const BridgeModel<T>& model, const Vocabulary& vocab) {
  Checkpoint ck;
  ck.header = config_echo(model.config());
  ck.header += fmt::format("vocab_fingerprint = {:016x}\n", vocab.fingerprint());
  ck.fields = parse_header(ck.header);
  for (const auto& [name, t] : model.trainable().entries()) {
    ck.tensors.emplace(name, t->template cast<float>());
  }
  return ck;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, to_u32(ck.header.size(), "header length"));
  out += ck.header;
  put_u32(out, to_u32(ck.tensors.size(), "tensor count"));
  for (const auto& [name, t] : ck.tensors) {
    put_u32(out, to_u32(name.size(), "name length"));
    out += name;
    put_u32(out, to_u32(t.rank(), "rank"));
    for (std::size_t e : t.shape()) put_u32(out, to_u32(e, "extent"));
    for (float v : t.data()) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader in(bytes, "checkpoint");
  if (bytes.size() < 4 || bytes.substr(0, 4) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic (expected LFCK)");
  }
  in.take(4);
  if (const auto v = in.u32(); v != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint: unsupported version {}", v));
  }
  Checkpoint ck;
  ck.header = std::string(in.take(in.u32()));
  ck.fields = parse_header(ck.header);
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(in.take(in.u32()));
    const std::uint32_t rank = in.u32();
    if (rank == 0 || rank > 8) {
      throw FormatError(fmt::format("checkpoint: tensor '{}' has rank {}", name, rank));
    }
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(in.u32());
    for (std::size_t e : shape) {
      if (e == 0) throw FormatError(fmt::format("checkpoint: tensor '{}' has a zero extent", name));
    }
    const std::size_t numel = shape_numel(shape);
    in.need(numel * 4);
    Tensor<float> t(shape);
    for (std::size_t j = 0; j < numel; ++j) t[j] = in.f32();
    if (!ck.tensors.emplace(name, std::move(t)).second) {
      throw FormatError(fmt::format("checkpoint: tensor '{}' appears twice", name));
    }
  }
  if (!in.done()) {
    throw FormatError(fmt::format("checkpoint: {} trailing bytes", bytes.size() - in.pos()));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

RunConfig checkpoint_config(const Checkpoint& ck, RunConfig base) {
  for (const auto& [key, value] : ck.fields) {
    if (key == "vocab_fingerprint") continue;
    apply_setting(base, key, value);
  }
  return base;
}

void check_compatible(const Checkpoint& ck, const RunConfig& config, const Vocabulary& vocab) {
  std::map<std::string, std::string> current;
  for (auto& [k, v] : config_entries(config)) current.emplace(k, v);
  current["vocab_fingerprint"] = fmt::format("{:016x}", vocab.fingerprint());
  std::vector<std::string> keys = architecture_keys();
  keys.push_back("vocab_fingerprint");
  std::vector<std::string> diffs;
  for (const auto& key : keys) {
    auto it = ck.fields.find(key);
    const std::string stored = it == ck.fields.end() ? "<missing>" : it->second;
    if (stored != current[key]) {
      diffs.push_back(fmt::format("{} (checkpoint {}, config {})", key, stored, current[key]));
    }
  }
  if (!diffs.empty()) {
    std::string msg = "checkpoint does not match the config:";
    for (const auto& d : diffs) msg += " " + d + ";";
    msg.pop_back();
    throw CompatibilityError(msg);
  }
}

template <typename T>
void restore_trainable(BridgeModel<T>& model, const Checkpoint& ck, const Vocabulary& vocab) {
  check_compatible(ck, model.config(), vocab);
  ParameterSet<T>& params = model.trainable();
  for (const auto& name : params.names()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      throw CompatibilityError(fmt::format("checkpoint lacks trainable tensor '{}'", name));
    }
    params.set(name, it->second.template cast<T>());
  }
  for (const auto& [name, _] : ck.tensors) {
    if (!params.contains(name)) {
      throw CompatibilityError(fmt::format("checkpoint has unexpected tensor '{}'", name));
    }
  }
}

template <typename T>
std::string parameter_bytes(const ParameterSet<T>& params) {
  std::string out;
  for (const auto& [name, t] : params.entries()) {
    out += name;
    out.push_back('\0');
    out += shape_string(t->shape());
    out.append(reinterpret_cast<const char*>(t->ptr()), t->numel() * sizeof(T));
  }
  return out;
}

#define LFUSE_INSTANTIATE_DATA_IO(T)                                                           \
  template std::vector<EncodedExample<T>> encode_dataset(                                      \
      const std::vector<InstructionExample>&, const Vocabulary&, const FrozenEncoder<T>&);     \
  template std::string encode_hidden_states(const std::vector<LayerStack<T>>&);                \
  template std::vector<LayerStack<T>> decode_hidden_states<T>(std::string_view);               \
  template void export_hidden_states(const std::filesystem::path&,                             \
                                     const std::vector<LayerStack<T>>&);                       \
  template std::vector<LayerStack<T>> import_hidden_states<T>(const std::filesystem::path&);   \
  template Checkpoint make_checkpoint(const BridgeModel<T>&, const Vocabulary&);               \
  template void restore_trainable(BridgeModel<T>&, const Checkpoint&, const Vocabulary&);      \
  template std::string parameter_bytes(const ParameterSet<T>&);

LFUSE_INSTANTIATE_DATA_IO(float)
LFUSE_INSTANTIATE_DATA_IO(double)

}  // namespace lfuse
