#pragma once

#include <map>
#include <string>
#include <vector>

#include "lfuse/bridge.hpp"
#include "lfuse/data_io.hpp"

namespace lfuse {

struct SplitScore {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / n; }
};

struct EvalReport {
  std::vector<std::string> labels;
  SplitScore overall;
  std::map<std::string, SplitScore> by_lang;  // "" for untagged examples
  // confusion[true][predicted], indices into `labels`.
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> predictions;  // per example, dataset order

  // `split,n,correct,accuracy` rows, one per language tag then `all`.
  std::string csv() const;
  std::string text() const;
};

// Loss of each candidate label as the target for one encoded source.
template <typename T>
std::vector<T> label_losses(const BridgeModel<T>& model, const LayerStack<T>& stack,
                            const std::vector<TokenSequence>& labels);

// Predicts argmin of label_losses (earliest label wins ties). Throws
// ConfigError for an empty label set and DataError naming the line when a
// target is not one of the labels.
template <typename T>
EvalReport evaluate_accuracy(const BridgeModel<T>& model, const std::vector<EncodedExample<T>>& data,
                             const std::vector<std::string>& labels, const Vocabulary& vocab);

struct LayerWeightReport {
  FusionMode mode = FusionMode::kGlobal;
  std::vector<double> mean;  // per layer
  // Token-wise only: one row per probe token, in dataset then token order.
  std::vector<std::vector<double>> per_token;

  // `layer,weight` (global/last) or `token_index,layer,weight` (token-wise),
  // layers numbered from 1, weights with 6 decimals.
  std::string csv() const;
  std::string mean_csv() const;
};

// Global/last read the weights from the parameters; token-wise averages
// alpha_t over every probe token and throws ConfigError without probe data.
template <typename T>
LayerWeightReport inspect_layer_weights(const BridgeModel<T>& model,
                                        const std::vector<EncodedExample<T>>& probe);

struct LatencyReport {
  std::string mode;
  double mean_ms = 0;
  double median_ms = 0;
  double p95_ms = 0;
  std::size_t warmup = 0;
  std::size_t reps = 0;
};

struct BenchOptions {
  std::size_t warmup = 5;
  std::size_t reps = 30;
};

// Per-token latency of one forward step (encode, fuse, project, decoder
// logits for a one-token target) for each fusion mode on identical inputs.
// Modes are interleaved rep by rep. Throws ConfigError for reps < 30 or
// warmup < 5.
std::vector<LatencyReport> latency_bench(const RunConfig& config, const Vocabulary& vocab,
                                         const std::vector<TokenSequence>& inputs,
                                         const std::vector<FusionMode>& modes,
                                         BenchOptions options = {});

std::string latency_csv(const std::vector<LatencyReport>& reports);

}  // namespace lfuse
