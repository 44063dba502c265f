#include "lfuse/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>
#include <numeric>

namespace lfuse {

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_base) {
  if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) {
    throw ContractError(
        fmt::format("cosine_lr: step {} is past total_steps {}", step, total_steps));
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
void adam_step(ParameterSet<T>& params, const NamedGradients<T>& grads, AdamState<T>& state,
               double lr) {
  ++state.step;
  const AdamHyper& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    const Tensor<T>& p = params.get(name);
    if (p.shape() != g.shape()) {
      throw DimensionError(fmt::format("adam: gradient {} for parameter '{}' of shape {}",
                                       shape_string(g.shape()), name, shape_string(p.shape())));
    }
    auto [mit, fresh] = state.m.try_emplace(name, p.shape());
    auto vit = state.v.try_emplace(name, p.shape()).first;
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    Tensor<T> next = p;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double x = next[i];
      if (h.weight_decay > 0) x -= lr * h.weight_decay * x;
      x -= lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      next[i] = static_cast<T>(x);
    }
    params.set(name, std::move(next));
  }
}

template <typename T>
double clip_gradients(NamedGradients<T>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [_, g] : grads) {
    for (T v : g.data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : grads) {
      for (T& v : g.data()) v *= s;
    }
  }
  return norm;
}

namespace {

template <typename T>
std::vector<double> snapshot_weights(const BridgeModel<T>& model,
                                     const std::vector<EncodedExample<T>>& data) {
  const RunConfig& c = model.config();
  if (data.empty()) return {};
  if (c.fusion_mode != FusionMode::kTokenwise) {
    const auto fused = fuse_values(model.trainable(), *data.front().stack, c);
    return {fused.weights.data().begin(), fused.weights.data().end()};
  }
  std::vector<double> mean(c.fused_layers(), 0.0);
  std::size_t rows = 0;
  for (const auto& ex : data) {
    const auto fused = fuse_values(model.trainable(), *ex.stack, c);
    const Tensor<T>& w = fused.weights;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t l = 0; l < w.cols(); ++l) mean[l] += w.at(r, l);
    }
    rows += w.rows();
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  return mean;
}

}  // namespace

template <typename T>
TrainRunLog train(BridgeModel<T>& model, const std::vector<EncodedExample<T>>& data) {
  const RunConfig& c = model.config();
  if (data.empty()) throw DataError("train: empty dataset");
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + c.batch - 1) / c.batch;
  const std::size_t total = c.epochs * per_epoch;

  TrainRunLog log;
  AdamState<T> adam;
  adam.hyper.weight_decay = c.weight_decay;
  Rng order_rng(derive_seed(c.seed, 2));
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      std::vector<const EncodedExample<T>*> batch;
      for (std::size_t i = b * c.batch; i < std::min(n, (b + 1) * c.batch); ++i) {
        batch.push_back(&data[order[i]]);
      }
      BatchResult<T> r = batch_forward<T>(model, batch, true, c.threads);
      if (!std::isfinite(static_cast<double>(r.loss))) {
        throw NumericError(fmt::format("train: loss is {} at step {}", r.loss, step));
      }
      if (c.clip_norm > 0) clip_gradients(r.grads, c.clip_norm);
      const double lr = cosine_lr(step, total, c.lr_base);
      adam_step(model.trainable(), r.grads, adam, lr);
      log.steps.push_back({step, lr, static_cast<double>(r.loss)});
      epoch_loss += static_cast<double>(r.loss);
    }
    log.epochs.push_back({epoch, epoch_loss / static_cast<double>(per_epoch)});
    spdlog::info("epoch {}: mean loss {:.6f}", epoch, log.epochs.back().mean_loss);
  }
  log.final_weights = snapshot_weights(model, data);
  return log;
}

std::string log_csv(const TrainRunLog& log) {
  std::string out = "step,lr,loss\n";
  for (const auto& s : log.steps) out += fmt::format("{},{:.9g},{:.9g}\n", s.step, s.lr, s.loss);
  return out;
}

std::string log_summary(const TrainRunLog& log, const RunConfig& config) {
  std::string out = fmt::format("fusion_mode: {}\nsteps: {}\n", to_string(config.fusion_mode),
                                log.steps.size());
  for (const auto& e : log.epochs) {
    out += fmt::format("epoch {} mean_loss {:.6f}\n", e.epoch, e.mean_loss);
  }
  if (!log.final_weights.empty()) {
    out += "final_layer_weights:";
    for (double w : log.final_weights) out += fmt::format(" {:.6f}", w);
    out += "\n";
  }
  return out;
}

#define LFUSE_INSTANTIATE_TRAINER(T)                                                      \
  template void adam_step(ParameterSet<T>&, const NamedGradients<T>&, AdamState<T>&,      \
                          double);                                                        \
  template double clip_gradients(NamedGradients<T>&, double);                             \
  template TrainRunLog train(BridgeModel<T>&, const std::vector<EncodedExample<T>>&);

LFUSE_INSTANTIATE_TRAINER(float)
LFUSE_INSTANTIATE_TRAINER(double)

}  // namespace lfuse
