#include "lfuse/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace lfuse {

std::string EvalReport::csv() const {
  std::string out = "split,n,correct,accuracy\n";
  for (const auto& [lang, s] : by_lang) {
    out += fmt::format("{},{},{},{:.6f}\n", lang.empty() ? "untagged" : lang, s.n, s.correct,
                       s.accuracy());
  }
  out += fmt::format("all,{},{},{:.6f}\n", overall.n, overall.correct, overall.accuracy());
  return out;
}

std::string EvalReport::text() const {
  std::string out = fmt::format("accuracy {:.4f} ({}/{})\n", overall.accuracy(), overall.correct,
                                overall.n);
  for (const auto& [lang, s] : by_lang) {
    out += fmt::format("  {:<10} {:.4f} ({}/{})\n", lang.empty() ? "untagged" : lang,
                       s.accuracy(), s.correct, s.n);
  }
  out += "confusion (rows true, columns predicted):\n";
  std::size_t w = 6;
  for (const auto& l : labels) w = std::max(w, l.size());
  out += fmt::format("  {:<{}}", "", w);
  for (const auto& l : labels) out += fmt::format(" {:>{}}", l, w);
  out += "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += fmt::format("  {:<{}}", labels[i], w);
    for (std::size_t c : confusion[i]) out += fmt::format(" {:>{}}", c, w);
    out += "\n";
  }
  return out;
}

template <typename T>
std::vector<T> label_losses(const BridgeModel<T>& model, const LayerStack<T>& stack,
                            const std::vector<TokenSequence>& labels) {
  Tape<T> tape(TapeOptions{.check_finite = model.config().check_finite, .record = false});
  const BoundParams<T> params = model.trainable().bind(tape, false);
  const FusionOutput<T> fused = fuse(params, tape.constant(stack), model.config());
  const Var<T> z = project(fused.vectors, params["proj.weight"], params["proj.bias"]);
  std::vector<T> out;
  out.reserve(labels.size());
  for (const auto& label : labels) {
    const Var<T> logits = model.decoder().logits(z, shift_right(label));
    out.push_back(cross_entropy(logits, label, model.config().loss_reduction).value().item());
  }
  return out;
}

template <typename T>
EvalReport evaluate_accuracy(const BridgeModel<T>& model, const std::vector<EncodedExample<T>>& data,
                             const std::vector<std::string>& labels, const Vocabulary& vocab) {
  if (labels.empty()) throw ConfigError("labels: the label set is empty");
  std::vector<TokenSequence> label_ids;
  for (const auto& l : labels) label_ids.push_back(tokenize(l, vocab));
  EvalReport report;
  report.labels = labels;
  report.confusion.assign(labels.size(), std::vector<std::size_t>(labels.size(), 0));
  for (const auto& ex : data) {
    const auto truth = std::find(label_ids.begin(), label_ids.end(), ex.target);
    if (truth == label_ids.end()) {
      throw DataError(fmt::format("line {}: target '{}' is not one of the labels", ex.line,
                                  detokenize(ex.target, vocab)));
    }
    const std::vector<T> losses = label_losses(model, *ex.stack, label_ids);
    // min_element returns the first minimum, so ties go to the earlier label.
    const auto pred =
        static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin());
    const auto t = static_cast<std::size_t>(truth - label_ids.begin());
    const bool ok = pred == t;
    report.predictions.push_back(pred);
    ++report.confusion[t][pred];
    ++report.overall.n;
    report.overall.correct += ok;
    auto& split = report.by_lang[ex.lang];
    ++split.n;
    split.correct += ok;
  }
  return report;
}

std::string LayerWeightReport::csv() const {
  std::string out;
  if (mode != FusionMode::kTokenwise) {
    out = "layer,weight\n";
    for (std::size_t l = 0; l < mean.size(); ++l) out += fmt::format("{},{:.6f}\n", l + 1, mean[l]);
    return out;
  }
  out = "token_index,layer,weight\n";
  for (std::size_t t = 0; t < per_token.size(); ++t) {
    for (std::size_t l = 0; l < per_token[t].size(); ++l) {
      out += fmt::format("{},{},{:.6f}\n", t, l + 1, per_token[t][l]);
    }
  }
  return out;
}

std::string LayerWeightReport::mean_csv() const {
  std::string out = "layer,weight\n";
  for (std::size_t l = 0; l < mean.size(); ++l) out += fmt::format("{},{:.6f}\n", l + 1, mean[l]);
  return out;
}

template <typename T>
LayerWeightReport inspect_layer_weights(const BridgeModel<T>& model,
                                        const std::vector<EncodedExample<T>>& probe) {
  const RunConfig& c = model.config();
  LayerWeightReport report;
  report.mode = c.fusion_mode;
  if (c.fusion_mode != FusionMode::kTokenwise) {
    // The weights do not depend on the input; a one-token dummy stack suffices.
    const Tensor<T> dummy({1, c.fused_layers(), c.width});
    const auto fused = fuse_values(model.trainable(), dummy, c);
    report.mean.assign(fused.weights.data().begin(), fused.weights.data().end());
    return report;
  }
  if (probe.empty()) throw ConfigError("inspect: token-wise mode needs probe data (--data)");
  report.mean.assign(c.fused_layers(), 0.0);
  for (const auto& ex : probe) {
    const auto fused = fuse_values(model.trainable(), *ex.stack, c);
    const Tensor<T>& w = fused.weights;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      std::vector<double> row(w.cols());
      for (std::size_t l = 0; l < w.cols(); ++l) {
        row[l] = w.at(r, l);
        report.mean[l] += row[l];
      }
      report.per_token.push_back(std::move(row));
    }
  }
  for (double& m : report.mean) m /= static_cast<double>(report.per_token.size());
  return report;
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  // Nearest-rank.
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<LatencyReport> latency_bench(const RunConfig& config, const Vocabulary& vocab,
                                         const std::vector<TokenSequence>& inputs,
                                         const std::vector<FusionMode>& modes,
                                         BenchOptions options) {
  if (options.reps < 30) throw ConfigError(fmt::format("reps: need >= 30, got {}", options.reps));
  if (options.warmup < 5) {
    throw ConfigError(fmt::format("warmup: need >= 5, got {}", options.warmup));
  }
  if (inputs.empty()) throw ConfigError("bench: no inputs");
  if (modes.empty()) throw ConfigError("bench: no fusion modes");

  RunConfig base = config;
  base.check_finite = false;
  base.precision = Precision::kF32;
  const auto encoder = std::make_shared<const FrozenEncoder<float>>(base, vocab);
  const auto decoder = std::make_shared<const FrozenDecoderLM<float>>(base);
  std::vector<BridgeModel<float>> models;
  for (FusionMode m : modes) {
    RunConfig c = base;
    c.fusion_mode = m;
    models.emplace_back(c, encoder, decoder);
  }
  const TokenSequence target = {kEosId};

  auto step = [&](const BridgeModel<float>& model, const TokenSequence& src) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const LayerStack<float> stack = model.encoder().encode(src);
    Tape<float> tape(TapeOptions{.check_finite = false, .record = false});
    const BoundParams<float> params = model.trainable().bind(tape, false);
    const FusionOutput<float> fused = fuse(params, tape.constant(stack), model.config());
    const Var<float> z = project(fused.vectors, params["proj.weight"], params["proj.bias"]);
    const Var<float> logits = model.decoder().logits(z, target);
    volatile float sink = logits.value()[0];
    (void)sink;
    const std::chrono::duration<double, std::milli> ms = clock::now() - start;
    return ms.count() / static_cast<double>(src.size());
  };

  std::vector<std::vector<double>> samples(models.size());
  const std::size_t total = options.warmup + options.reps;
  for (std::size_t r = 0; r < total; ++r) {
    const TokenSequence& src = inputs[r % inputs.size()];
    for (std::size_t m = 0; m < models.size(); ++m) {
      const double ms = step(models[m], src);
      if (r >= options.warmup) samples[m].push_back(ms);
    }
  }

  std::vector<LatencyReport> out;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& s = samples[m];
    LatencyReport rep;
    rep.mode = std::string(to_string(modes[m]));
    double sum = 0;
    for (double v : s) sum += v;
    rep.mean_ms = sum / static_cast<double>(s.size());
    rep.median_ms = median(s);
    rep.p95_ms = percentile(s, 0.95);
    rep.warmup = options.warmup;
    rep.reps = options.reps;
    out.push_back(rep);
  }
  return out;
}

std::string latency_csv(const std::vector<LatencyReport>& reports) {
  std::string out = "mode,mean_ms,median_ms,p95_ms\n";
  for (const auto& r : reports) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", r.mode, r.mean_ms, r.median_ms, r.p95_ms);
  }
  return out;
}

#define LFUSE_INSTANTIATE_EVAL(T)                                                              \
  template std::vector<T> label_losses(const BridgeModel<T>&, const LayerStack<T>&,            \
                                       const std::vector<TokenSequence>&);                     \
  template EvalReport evaluate_accuracy(const BridgeModel<T>&,                                 \
                                        const std::vector<EncodedExample<T>>&,                 \
                                        const std::vector<std::string>&, const Vocabulary&);   \
  template LayerWeightReport inspect_layer_weights(const BridgeModel<T>&,                      \
                                                   const std::vector<EncodedExample<T>>&);

LFUSE_INSTANTIATE_EVAL(float)
LFUSE_INSTANTIATE_EVAL(double)

}  // namespace lfuse
