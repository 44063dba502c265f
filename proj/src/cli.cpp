#include "lfuse/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>

#include "lfuse/bridge_check.hpp"
#include "lfuse/eval.hpp"
#include "lfuse/kernels.hpp"
#include "lfuse/trainer.hpp"

namespace lfuse {
namespace {

struct ConfigFlag {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr ConfigFlag kConfigFlags[] = {
    {"--layers", "L", "encoder layers L"},
    {"--width", "d", "encoder width d"},
    {"--decoder-width", "d_prime", "decoder width d'"},
    {"--vocab-size", "V", "vocabulary size V"},
    {"--max-len", "max_T", "maximum source tokens"},
    {"--heads", "heads", "attention heads of the token-wise fusion block"},
    {"--encoder-heads", "encoder_heads", "attention heads of the toy encoder"},
    {"--decoder-heads", "decoder_heads", "attention heads of the toy decoder"},
    {"--decoder-blocks", "decoder_blocks", "blocks of the toy decoder"},
    {"--fusion", "fusion_mode", "last | global | tokenwise"},
    {"--base-temp", "base_temp", "constant term of the effective temperature"},
    {"--factor", "factor", "scale of the learned temperature"},
    {"--temp-init", "temp_init", "initial temp (learned) or tau itself (fixed)"},
    {"--temperature-mode", "temperature_mode", "learned | fixed"},
    {"--init-std", "init_std", "std of fusion parameter init"},
    {"--include-embedding-layer", "include_embedding_layer",
     "also fuse the encoder embedding output"},
    {"--loss-reduction", "loss_reduction", "mean | sum over target tokens"},
    {"--epochs", "epochs", "training epochs"},
    {"--lr", "lr_base", "peak learning rate of the cosine schedule"},
    {"--batch", "batch", "examples per optimizer step"},
    {"--weight-decay", "weight_decay", "decoupled weight decay"},
    {"--clip-norm", "clip_norm", "global gradient norm clip, 0 = off"},
    {"--seed", "seed", "seed for trainable init, data order and generated data"},
    {"--backbone-seed", "backbone_seed", "seed of the frozen encoder and decoder"},
    {"--script-alignment", "script_alignment",
     "correlation of cross-script embeddings in the toy encoder"},
    {"--precision", "precision", "f32 | f64"},
    {"--check-finite", "check_finite", "raise on NaN/Inf at every op"},
    {"--threads", "threads", "worker threads for per-example passes"},
};

struct UsageError : Error {
  using Error::Error;
};

// Flags shared by every subcommand. Config values stay strings until
// resolve() so the file and the flags go through the same parser.
struct CommonFlags {
  std::string config_path;
  std::string vocab_path;
  std::string kernels = "auto";
  std::string log_level = "info";
  std::vector<std::pair<std::string, std::string>> values;  // key, raw
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App* app, const RunConfig& defaults) {
    app->add_option("--config", config_path, "key = value config file; flags override it");
    app->add_option("--vocab", vocab_path, "vocabulary file (default: builtin toy vocabulary)");
    app->add_option("--kernels", kernels, "auto | scalar | avx2 | neon")->capture_default_str();
    app->add_option("--log-level", log_level, "trace | debug | info | warn | error | off")
        ->capture_default_str();
    std::map<std::string, std::string> shown;
    for (auto& [k, v] : config_entries(defaults)) shown[k] = v;
    values.resize(std::size(kConfigFlags));
    for (std::size_t i = 0; i < std::size(kConfigFlags); ++i) {
      const ConfigFlag& f = kConfigFlags[i];
      values[i].first = f.key;
      CLI::Option* opt =
          app->add_option(f.flag, values[i].second, fmt::format("{} [key: {}]", f.help, f.key));
      opt->default_str(shown.at(f.key));
      options.emplace_back(f.key, opt);
    }
  }

  bool given(const std::string& key) const {
    for (const auto& [k, opt] : options) {
      if (k == key) return opt->count() > 0;
    }
    return false;
  }

  void apply_environment() const {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (kernels != "auto") kernels::set_backend(kernels::parse_backend(kernels));
  }

  // base -> config file -> flags.
  RunConfig resolve(RunConfig base) const {
    if (!config_path.empty()) base = load_config_file(config_path, base);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (options[i].second->count() > 0) apply_setting(base, values[i].first, values[i].second);
    }
    base.validate();
    return base;
  }

  Vocabulary vocabulary(const RunConfig& config) const {
    return vocab_path.empty() ? Vocabulary::builtin(config.vocab_size)
                              : Vocabulary::load(vocab_path);
  }
};

void echo_config(std::ostream& out, const RunConfig& config) {
  out << "# config\n";
  for (const auto& [k, v] : config_entries(config)) out << "#   " << k << " = " << v << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    std::string item = s.substr(start, end - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
    start = end + 1;
  }
  return out;
}

std::string sibling(const std::string& path, const std::string& suffix) { return path + suffix; }

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string task = "xnli-like";
  std::size_t n = 2000;
  std::string out;
  bool shifted = false;
  std::string vocab_out;
};

int run_gen_data(const CommonFlags& common, const GenDataArgs& args, std::ostream& out) {
  const RunConfig config = common.resolve({});
  const Vocabulary vocab = common.vocabulary(config);
  const ToyTask task = parse_toy_task(args.task);
  const auto examples = gen_toy_task(task, args.n, config.seed, vocab, args.shifted);
  save_jsonl(args.out, examples);
  if (!args.vocab_out.empty()) vocab.save(args.vocab_out);
  out << fmt::format("wrote {} {} examples{} to {}\n", examples.size(), to_string(task),
                     args.shifted ? " (shifted script)" : "", args.out);
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string log;
  std::string summary;
};

template <typename T>
int run_train_typed(const RunConfig& config, const Vocabulary& vocab, const TrainArgs& args,
                    std::ostream& out) {
  const auto examples = load_jsonl(args.data);
  BridgeModel<T> model(config, vocab);
  const std::string frozen_before =
      parameter_bytes(model.encoder().parameters()) + parameter_bytes(model.decoder().parameters());
  const auto data = encode_dataset(examples, vocab, model.encoder());
  const TrainRunLog log = train(model, data);
  const std::string frozen_after =
      parameter_bytes(model.encoder().parameters()) + parameter_bytes(model.decoder().parameters());
  if (frozen_before != frozen_after) throw ContractError("train: frozen parameters changed");

  save_checkpoint(args.out, make_checkpoint(model, vocab));
  const std::string log_path = args.log.empty() ? sibling(args.out, ".log.csv") : args.log;
  const std::string summary_path =
      args.summary.empty() ? sibling(args.out, ".summary.txt") : args.summary;
  write_file(log_path, log_csv(log));
  write_file(summary_path, log_summary(log, config));
  out << log_summary(log, config);
  out << fmt::format("checkpoint: {}\nlog: {}\nsummary: {}\n", args.out, log_path, summary_path);
  return 0;
}

int run_train(const CommonFlags& common, const TrainArgs& args, std::ostream& out) {
  const RunConfig config = common.resolve({});
  const Vocabulary vocab = common.vocabulary(config);
  echo_config(out, config);
  return config.precision == Precision::kF64 ? run_train_typed<double>(config, vocab, args, out)
                                             : run_train_typed<float>(config, vocab, args, out);
}

// ---- eval / inspect -----------------------------------------------------------

// Header config, then the config file and flags; architecture keys given by
// the user must agree with the checkpoint.
RunConfig config_for_checkpoint(const CommonFlags& common, const Checkpoint& ck,
                                Vocabulary& vocab) {
  const RunConfig config = common.resolve(checkpoint_config(ck));
  vocab = common.vocabulary(config);
  check_compatible(ck, config, vocab);
  return config;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string labels = "entailment,neutral,contradiction";
  std::string report;
};

template <typename T>
int run_eval_typed(const RunConfig& config, const Vocabulary& vocab, const Checkpoint& ck,
                   const EvalArgs& args, std::ostream& out) {
  BridgeModel<T> model(config, vocab);
  restore_trainable(model, ck, vocab);
  const auto data = encode_dataset(load_jsonl(args.data), vocab, model.encoder());
  const EvalReport report = evaluate_accuracy(model, data, split_list(args.labels), vocab);
  out << report.text();
  if (!args.report.empty()) {
    write_file(sibling(args.report, ".csv"), report.csv());
    write_file(sibling(args.report, ".txt"), report.text());
    out << fmt::format("report: {}.csv, {}.txt\n", args.report, args.report);
  }
  return 0;
}

int run_eval(const CommonFlags& common, const EvalArgs& args, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  Vocabulary vocab = Vocabulary::builtin(24);
  const RunConfig config = config_for_checkpoint(common, ck, vocab);
  echo_config(out, config);
  return config.precision == Precision::kF64
             ? run_eval_typed<double>(config, vocab, ck, args, out)
             : run_eval_typed<float>(config, vocab, ck, args, out);
}

struct InspectArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string mean_out;
};

template <typename T>
int run_inspect_typed(const RunConfig& config, const Vocabulary& vocab, const Checkpoint& ck,
                      const InspectArgs& args, std::ostream& out) {
  BridgeModel<T> model(config, vocab);
  restore_trainable(model, ck, vocab);
  std::vector<EncodedExample<T>> probe;
  if (!args.data.empty()) probe = encode_dataset(load_jsonl(args.data), vocab, model.encoder());
  const LayerWeightReport report = inspect_layer_weights(model, probe);
  write_file(args.out, report.csv());
  out << fmt::format("layer weights ({}):\n", to_string(config.fusion_mode));
  for (std::size_t l = 0; l < report.mean.size(); ++l) {
    out << fmt::format("  layer {:>2}  {:.6f}\n", l + 1, report.mean[l]);
  }
  out << "csv: " << args.out << "\n";
  if (config.fusion_mode == FusionMode::kTokenwise) {
    const std::string mean_path = args.mean_out.empty() ? sibling(args.out, ".mean.csv")
                                                        : args.mean_out;
    write_file(mean_path, report.mean_csv());
    out << "mean csv: " << mean_path << "\n";
  }
  return 0;
}

int run_inspect(const CommonFlags& common, const InspectArgs& args, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  Vocabulary vocab = Vocabulary::builtin(24);
  const RunConfig config = config_for_checkpoint(common, ck, vocab);
  echo_config(out, config);
  return config.precision == Precision::kF64
             ? run_inspect_typed<double>(config, vocab, ck, args, out)
             : run_inspect_typed<float>(config, vocab, ck, args, out);
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  std::string data;
  std::size_t examples = 64;
  std::string modes = "last,global,tokenwise";
  std::size_t reps = 30;
  std::size_t warmup = 5;
  std::string out;
};

int run_bench(const CommonFlags& common, const BenchArgs& args, std::ostream& out) {
  const RunConfig config = common.resolve({});
  const Vocabulary vocab = common.vocabulary(config);
  echo_config(out, config);
  const auto examples = args.data.empty()
                            ? gen_toy_task(ToyTask::kXnliLike, args.examples, config.seed, vocab)
                            : load_jsonl(args.data);
  std::vector<TokenSequence> inputs;
  for (const auto& ex : examples) inputs.push_back(tokenize(ex.source, vocab));
  std::vector<FusionMode> modes;
  for (const auto& m : split_list(args.modes)) modes.push_back(parse_fusion_mode(m));
  const auto reports =
      latency_bench(config, vocab, inputs, modes, BenchOptions{args.warmup, args.reps});
  const std::string csv = latency_csv(reports);
  out << fmt::format("# per-token forward latency, {} warmup + {} reps, kernels {}\n",
                     args.warmup, args.reps, kernels::backend_name(kernels::active_backend()));
  out << csv;
  if (!args.out.empty()) write_file(args.out, csv);
  return 0;
}

// ---- grad-check -------------------------------------------------------------

struct GradCheckArgs {
  std::size_t seeds = 1;
  std::string modes = "last,global,tokenwise";
  double eps = 1e-4;
  double tol = 1e-6;
};

int run_grad_check(const CommonFlags& common, const GradCheckArgs& args, std::ostream& out) {
  RunConfig config = common.resolve(gradcheck_config());
  config.precision = Precision::kF64;
  const Vocabulary vocab = common.vocabulary(config);
  echo_config(out, config);
  double worst = 0;
  bool ok = true;
  for (const auto& m : split_list(args.modes)) {
    config.fusion_mode = parse_fusion_mode(m);
    for (std::size_t s = 0; s < args.seeds; ++s) {
      const BridgeGradCheck r = check_bridge_gradients(config, vocab, config.seed + s, args.eps);
      out << fmt::format("{} seed {} (T={}, K={}): max rel error {:.3e}\n", m, config.seed + s,
                         r.source_len, r.target_len, r.max_error());
      for (const auto& t : r.tensors) {
        out << fmt::format("  {:<28} {:>5}  {}\n", t.name, t.numel,
                           t.vanishing ? fmt::format("vanishing (abs {:.1e})", t.abs_error)
                                       : fmt::format("{:.3e}", t.rel_error));
      }
      worst = std::max(worst, r.max_error());
      ok = ok && r.passes(args.tol);
    }
  }
  out << fmt::format("max relative gradient error: {:.3e} ({} tolerance {:.0e})\n", worst,
                     ok ? "within" : "EXCEEDS", args.tol);
  return ok ? 0 : 2;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"lfuse: depth-wise encoder-layer fusion bridge (toy scale)", "lfuse"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  const RunConfig defaults;
  CommonFlags gen_common, train_common, eval_common, inspect_common, bench_common, gc_common;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic toy task as JSONL");
  gen_common.add(gen_cmd, defaults);
  gen_cmd->add_option("--task", gen.task, "copy | tagmap | xnli-like")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "number of examples")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output JSONL path")->required();
  gen_cmd->add_flag("--shifted", gen.shifted, "emit the shifted-script variant");
  gen_cmd->add_option("--vocab-out", gen.vocab_out, "also write the vocabulary file here");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train fusion + projection on a JSONL dataset");
  train_common.add(train_cmd, defaults);
  train_cmd->add_option("--data", tr.data, "training JSONL")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "step,lr,loss CSV (default: <out>.log.csv)");
  train_cmd->add_option("--summary", tr.summary, "summary text (default: <out>.summary.txt)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "label-scoring accuracy of a checkpoint");
  eval_common.add(eval_cmd, defaults);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--data", ev.data, "evaluation JSONL")->required();
  eval_cmd->add_option("--labels", ev.labels, "comma-separated candidate labels, in tie order")
      ->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "write <report>.csv and <report>.txt");

  InspectArgs in;
  auto* inspect_cmd = app.add_subcommand("inspect", "export the learned layer weights as CSV");
  inspect_common.add(inspect_cmd, defaults);
  inspect_cmd->add_option("--checkpoint", in.checkpoint, "checkpoint path")->required();
  inspect_cmd->add_option("--data", in.data, "probe JSONL (required for tokenwise)");
  inspect_cmd->add_option("--out", in.out, "CSV path")->required();
  inspect_cmd->add_option("--mean-out", in.mean_out,
                          "tokenwise mean weights CSV (default: <out>.mean.csv)");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "per-token forward latency of each fusion mode");
  bench_common.add(bench_cmd, defaults);
  bench_cmd->add_option("--data", bn.data, "JSONL whose sources are timed (default: generated)");
  bench_cmd->add_option("--examples", bn.examples, "generated xnli-like inputs when no --data")
      ->capture_default_str();
  bench_cmd->add_option("--modes", bn.modes, "comma-separated fusion modes")
      ->capture_default_str();
  bench_cmd->add_option("--reps", bn.reps, "timed repetitions per mode (>= 30)")
      ->capture_default_str();
  bench_cmd->add_option("--warmup", bn.warmup, "untimed warmup repetitions (>= 5)")
      ->capture_default_str();
  bench_cmd->add_option("--out", bn.out, "CSV path");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand(
      "grad-check", "compare backward() with central differences (f64, small dims)");
  gc_common.add(gc_cmd, gradcheck_config());
  gc_cmd->add_option("--seeds", gc.seeds, "number of consecutive seeds from --seed")
      ->capture_default_str();
  gc_cmd->add_option("--modes", gc.modes, "comma-separated fusion modes")->capture_default_str();
  gc_cmd->add_option("--eps", gc.eps, "central-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    // Top-level --help shows every subcommand with its flags and defaults.
    if (app.get_subcommands().empty()) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    }
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (*gen_cmd) {
      gen_common.apply_environment();
      return run_gen_data(gen_common, gen, out);
    }
    if (*train_cmd) {
      train_common.apply_environment();
      return run_train(train_common, tr, out);
    }
    if (*eval_cmd) {
      eval_common.apply_environment();
      return run_eval(eval_common, ev, out);
    }
    if (*inspect_cmd) {
      inspect_common.apply_environment();
      return run_inspect(inspect_common, in, out);
    }
    if (*bench_cmd) {
      bench_common.apply_environment();
      return run_bench(bench_common, bn, out);
    }
    if (*gc_cmd) {
      gc_common.apply_environment();
      return run_grad_check(gc_common, gc, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const CompatibilityError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace lfuse
