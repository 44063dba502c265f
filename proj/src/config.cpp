#include "lfuse/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace lfuse {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
  }
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string s(value);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, value));
  }
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(fmt::format("{}: expected true/false, got '{}'", key, value));
}

// Shortest representation that parses back to the same double.
std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kLast:
      return "last";
    case FusionMode::kGlobal:
      return "global";
    case FusionMode::kTokenwise:
      return "tokenwise";
  }
  return "?";
}

std::string_view to_string(Precision precision) {
  return precision == Precision::kF32 ? "f32" : "f64";
}

std::string_view to_string(TemperatureMode mode) {
  return mode == TemperatureMode::kLearned ? "learned" : "fixed";
}

std::string_view to_string(Reduction reduction) {
  return reduction == Reduction::kMean ? "mean" : "sum";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "last") return FusionMode::kLast;
  if (s == "global") return FusionMode::kGlobal;
  if (s == "tokenwise") return FusionMode::kTokenwise;
  throw ConfigError(fmt::format("fusion_mode: expected last, global or tokenwise, got '{}'", s));
}

void RunConfig::validate() const {
  auto positive = [](const char* name, std::size_t v) {
    if (v == 0) throw ConfigError(fmt::format("{}: must be >= 1", name));
  };
  positive("L", layers);
  positive("d", width);
  positive("d_prime", decoder_width);
  positive("V", vocab_size);
  positive("max_T", max_len);
  positive("heads", heads);
  positive("encoder_heads", encoder_heads);
  positive("decoder_heads", decoder_heads);
  positive("decoder_blocks", decoder_blocks);
  positive("batch", batch);
  positive("threads", threads);
  if (width % heads != 0) {
    throw ConfigError(fmt::format("heads: d={} is not divisible by {} heads", width, heads));
  }
  if (width % encoder_heads != 0) {
    throw ConfigError(
        fmt::format("encoder_heads: d={} is not divisible by {} heads", width, encoder_heads));
  }
  if (decoder_width % decoder_heads != 0) {
    throw ConfigError(fmt::format("decoder_heads: d_prime={} is not divisible by {} heads",
                                  decoder_width, decoder_heads));
  }
  if (vocab_size < 4) throw ConfigError("V: must leave room for the 4 reserved tokens");
  if (!(base_temp > 0)) throw ConfigError("base_temp: must be > 0");
  if (!(factor > 0)) throw ConfigError("factor: must be > 0");
  if (!(lr_base >= 0)) throw ConfigError("lr_base: must be >= 0");
  if (!(init_std >= 0)) throw ConfigError("init_std: must be >= 0");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm: must be >= 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay: must be >= 0");
  if (!(script_alignment >= 0 && script_alignment <= 1)) {
    throw ConfigError("script_alignment: must lie in [0, 1]");
  }
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string value = trim(raw);
  if (key == "L") c.layers = parse_uint(key, value);
  else if (key == "d") c.width = parse_uint(key, value);
  else if (key == "d_prime") c.decoder_width = parse_uint(key, value);
  else if (key == "V") c.vocab_size = parse_uint(key, value);
  else if (key == "max_T") c.max_len = parse_uint(key, value);
  else if (key == "heads") c.heads = parse_uint(key, value);
  else if (key == "encoder_heads") c.encoder_heads = parse_uint(key, value);
  else if (key == "decoder_heads") c.decoder_heads = parse_uint(key, value);
  else if (key == "decoder_blocks") c.decoder_blocks = parse_uint(key, value);
  else if (key == "fusion_mode") c.fusion_mode = parse_fusion_mode(value);
  else if (key == "base_temp") c.base_temp = parse_double(key, value);
  else if (key == "factor") c.factor = parse_double(key, value);
  else if (key == "temp_init") c.temp_init = parse_double(key, value);
  else if (key == "temperature_mode") {
    if (value == "learned") c.temperature_mode = TemperatureMode::kLearned;
    else if (value == "fixed") c.temperature_mode = TemperatureMode::kFixed;
    else throw ConfigError(fmt::format("temperature_mode: expected learned or fixed, got '{}'", value));
  } else if (key == "init_std") c.init_std = parse_double(key, value);
  else if (key == "include_embedding_layer") c.include_embedding_layer = parse_bool(key, value);
  else if (key == "loss_reduction") {
    if (value == "mean") c.loss_reduction = Reduction::kMean;
    else if (value == "sum") c.loss_reduction = Reduction::kSum;
    else throw ConfigError(fmt::format("loss_reduction: expected mean or sum, got '{}'", value));
  } else if (key == "epochs") c.epochs = parse_uint(key, value);
  else if (key == "lr_base") c.lr_base = parse_double(key, value);
  else if (key == "batch") c.batch = parse_uint(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_double(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "backbone_seed") c.backbone_seed = parse_uint(key, value);
  else if (key == "script_alignment") c.script_alignment = parse_double(key, value);
  else if (key == "precision") {
    if (value == "f32") c.precision = Precision::kF32;
    else if (value == "f64") c.precision = Precision::kF64;
    else throw ConfigError(fmt::format("precision: expected f32 or f64, got '{}'", value));
  } else if (key == "check_finite") c.check_finite = parse_bool(key, value);
  else if (key == "threads") c.threads = parse_uint(key, value);
  else throw ConfigError(fmt::format("unknown config key '{}'", key));
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      apply_setting(config, key, std::string_view(body).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, lineno, e.what()));
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config file '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(base, buf.str(), path.string());
  return base;
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  auto u = [](std::uint64_t v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"L", u(c.layers)},
      {"d", u(c.width)},
      {"d_prime", u(c.decoder_width)},
      {"V", u(c.vocab_size)},
      {"max_T", u(c.max_len)},
      {"heads", u(c.heads)},
      {"encoder_heads", u(c.encoder_heads)},
      {"decoder_heads", u(c.decoder_heads)},
      {"decoder_blocks", u(c.decoder_blocks)},
      {"fusion_mode", std::string(to_string(c.fusion_mode))},
      {"base_temp", fmt_double(c.base_temp)},
      {"factor", fmt_double(c.factor)},
      {"temp_init", fmt_double(c.temp_init)},
      {"temperature_mode", std::string(to_string(c.temperature_mode))},
      {"init_std", fmt_double(c.init_std)},
      {"include_embedding_layer", b(c.include_embedding_layer)},
      {"loss_reduction", std::string(to_string(c.loss_reduction))},
      {"epochs", u(c.epochs)},
      {"lr_base", fmt_double(c.lr_base)},
      {"batch", u(c.batch)},
      {"weight_decay", fmt_double(c.weight_decay)},
      {"clip_norm", fmt_double(c.clip_norm)},
      {"seed", u(c.seed)},
      {"backbone_seed", u(c.backbone_seed)},
      {"script_alignment", fmt_double(c.script_alignment)},
      {"precision", std::string(to_string(c.precision))},
      {"check_finite", b(c.check_finite)},
      {"threads", u(c.threads)},
  };
}

const std::vector<std::string>& architecture_keys() {
  static const std::vector<std::string> keys = {
      "L",         "d",         "d_prime",          "V",
      "max_T",     "heads",     "encoder_heads",    "decoder_heads",
      "decoder_blocks", "fusion_mode", "base_temp", "factor", "temp_init",
      "temperature_mode", "include_embedding_layer", "backbone_seed",
      "script_alignment",
  };
  return keys;
}

std::string config_echo(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += fmt::format("{} = {}\n", k, v);
  return out;
}

}  // namespace lfuse
