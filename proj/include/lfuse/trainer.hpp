#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lfuse/bridge.hpp"

namespace lfuse {

// lr_base * 0.5 * (1 + cos(pi * step / total_steps))
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_base);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> m, v;
};

// One bias-corrected Adam update of every parameter that has a gradient.
template <typename T>
void adam_step(ParameterSet<T>& params, const NamedGradients<T>& grads, AdamState<T>& state,
               double lr);

// Scales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(NamedGradients<T>& grads, double max_norm);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0;
};

struct TrainRunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
  std::vector<double> final_weights;  // global: alpha; tokenwise: mean alpha
};

// Runs config.epochs passes of ceil(N / batch) Adam steps over `data` with
// a cosine schedule. Only model.trainable() changes. Throws NumericError
// naming the step when the loss is not finite.
template <typename T>
TrainRunLog train(BridgeModel<T>& model, const std::vector<EncodedExample<T>>& data);

// `step,lr,loss` CSV and a short text summary.
std::string log_csv(const TrainRunLog& log);
std::string log_summary(const TrainRunLog& log, const RunConfig& config);

}  // namespace lfuse
