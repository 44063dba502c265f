#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lfuse/ops.hpp"

namespace lfuse {

enum class FusionMode { kLast, kGlobal, kTokenwise };
enum class Precision { kF32, kF64 };
// kLearned: tau = base_temp + temp * factor with temp trainable.
// kFixed: tau = temp_init, nothing temperature-related is trained.
enum class TemperatureMode { kLearned, kFixed };

std::string_view to_string(FusionMode mode);
std::string_view to_string(Precision precision);
std::string_view to_string(TemperatureMode mode);
std::string_view to_string(Reduction reduction);
FusionMode parse_fusion_mode(std::string_view s);

// Everything needed to rebuild a bridge: dimensions, backbone seeds, fusion
// settings and the training regimen. Config-file keys are listed in
// config_entries().
struct RunConfig {
  std::size_t layers = 8;          // L, encoder blocks
  std::size_t width = 16;          // d, encoder width
  std::size_t decoder_width = 32;  // d', decoder embedding width
  std::size_t vocab_size = 64;     // V
  std::size_t max_len = 32;        // max source length in tokens
  std::size_t heads = 4;           // fusion transformer block
  std::size_t encoder_heads = 2;
  std::size_t decoder_heads = 2;
  std::size_t decoder_blocks = 2;

  FusionMode fusion_mode = FusionMode::kGlobal;
  double base_temp = 1e2;
  double factor = 1e5;
  double temp_init = 1e-2;
  TemperatureMode temperature_mode = TemperatureMode::kLearned;
  double init_std = 0.02;
  bool include_embedding_layer = false;

  Reduction loss_reduction = Reduction::kMean;
  std::size_t epochs = 3;
  double lr_base = 3e-5;
  std::size_t batch = 8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables clipping

  std::uint64_t seed = 0;             // trainable init and data order
  std::uint64_t backbone_seed = 1234;  // frozen encoder/decoder
  double script_alignment = 0.8;      // cross-script embedding correlation
  Precision precision = Precision::kF32;
  bool check_finite = false;
  std::size_t threads = 1;

  // Layers seen by the fusion module (L, or L + 1 with the embedding output).
  std::size_t fused_layers() const { return layers + (include_embedding_layer ? 1 : 0); }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Sets one field from its config-file key. Throws ConfigError on an unknown
// key or unparsable value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Parses flat `key = value` lines; `#` starts a comment.
void apply_config_text(RunConfig& config, std::string_view text,
                       const std::string& origin = "<config>");
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

// Canonical (key, value) pairs, in a fixed order. Doubles are printed with
// full round-trip precision.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& config);

// Keys that change the architecture or the frozen backbones; a checkpoint can
// only be loaded under a config that agrees on all of them.
const std::vector<std::string>& architecture_keys();

std::string config_echo(const RunConfig& config);

}  // namespace lfuse
