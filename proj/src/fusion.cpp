#include "lfuse/fusion.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>

#include "lfuse/transformer.hpp"

namespace lfuse {
namespace {

template <typename T>
void check_stack(Var<T> stack, const char* who) {
  if (stack.value().rank() != 3) {
    throw DimensionError(fmt::format("{}: layer stack must be [T x L x d], got {}", who,
                                     shape_string(stack.shape())));
  }
}

}  // namespace

double effective_temperature(double base_temp, double temp, double factor) {
  const double tau = base_temp + temp * factor;
  warn_if_nonpositive_temperature(tau);
  return tau;
}

void warn_if_nonpositive_temperature(double tau) {
  static std::atomic<bool> warned{false};
  if (tau <= 0 && !warned.exchange(true)) {
    spdlog::warn("effective temperature {} <= 0: layer weight ordering is inverted", tau);
  }
}

template <typename T>
void init_fusion_params(ParameterSet<T>& params, const RunConfig& config, Rng& rng) {
  const std::size_t layers = config.fused_layers(), d = config.width;
  const double std = config.init_std;
  switch (config.fusion_mode) {
    case FusionMode::kLast:
      return;
    case FusionMode::kGlobal:
      params.add("fusion.w", rng.normal_tensor<T>({layers}, std));
      if (config.temperature_mode == TemperatureMode::kLearned) {
        params.add("fusion.temp", Tensor<T>::scalar(static_cast<T>(config.temp_init)));
      }
      return;
    case FusionMode::kTokenwise:
      if (d % config.heads != 0) {
        throw ConfigError(
            fmt::format("heads: d={} is not divisible by {} heads", d, config.heads));
      }
      params.add("fusion.query", rng.normal_tensor<T>({d}, std));
      params.add("fusion.pos", rng.normal_tensor<T>({layers + 1, d}, std));
      init_block(params, "fusion.block.", BlockShape{d, 4 * d}, rng, std);
      params.add("fusion.score.weight", rng.normal_tensor<T>({layers, d}, std));
      params.add("fusion.score.bias", Tensor<T>({layers}));
      return;
  }
}

template <typename T>
Var<T> global_alpha(Var<T> w, Var<T> temp, const RunConfig& config) {
  if (config.temperature_mode == TemperatureMode::kFixed) {
    warn_if_nonpositive_temperature(config.temp_init);
    return softmax(scale(w, static_cast<T>(config.temp_init)));
  }
  const Var<T> tau = shift(scale(temp, static_cast<T>(config.factor)),
                           static_cast<T>(config.base_temp));
  warn_if_nonpositive_temperature(static_cast<double>(tau.value().item()));
  return softmax(scale_by(w, tau));
}

template <typename T>
FusionOutput<T> global_fuse(Var<T> stack, Var<T> alpha) {
  check_stack(stack, "global_fuse");
  if (alpha.value().numel() != stack.value().dim(1)) {
    throw DimensionError(fmt::format("global_fuse: {} weights for a stack of {} layers",
                                     alpha.value().numel(), stack.value().dim(1)));
  }
  return {weighted_layer_sum(stack, alpha), alpha};
}

template <typename T>
FusionOutput<T> last_layer_fuse(Var<T> stack) {
  check_stack(stack, "last_layer_fuse");
  const Tensor<T>& s = stack.value();
  const std::size_t n = s.dim(0), layers = s.dim(1), d = s.dim(2);
  const Var<T> flat = reshape(stack, {n, layers * d});
  Tensor<T> one_hot({layers});
  one_hot[layers - 1] = T(1);
  return {slice_cols(flat, (layers - 1) * d, layers * d),
          stack.tape()->constant(std::move(one_hot))};
}

template <typename T>
FusionOutput<T> tokenwise_fuse(const BoundParams<T>& params, Var<T> stack, std::size_t heads) {
  check_stack(stack, "tokenwise_fuse");
  const Tensor<T>& s = stack.value();
  const std::size_t n = s.dim(0), layers = s.dim(1), d = s.dim(2);
  const Var<T> query = params["fusion.query"];
  const Var<T> pos = params["fusion.pos"];
  if (query.value().numel() != d || pos.value().rank() != 2 || pos.value().dim(0) != layers + 1 ||
      pos.value().dim(1) != d) {
    throw DimensionError(fmt::format(
        "tokenwise_fuse: stack {} does not match query {} / positions {}", shape_string(s.shape()),
        shape_string(query.shape()), shape_string(pos.shape())));
  }
  if (d % heads != 0) {
    throw ConfigError(fmt::format("heads: d={} is not divisible by {} heads", d, heads));
  }

  // Row 0 of the pool is c, row 1 + t*L + l is h_t^l.
  const Var<T> pool_parts[] = {reshape(query, {1, d}), reshape(stack, {n * layers, d})};
  const Var<T> pool = concat_rows<T>(pool_parts);
  const std::size_t group = layers + 1;
  std::vector<std::size_t> seq_rows, pos_rows, query_rows;
  seq_rows.reserve(n * group);
  pos_rows.reserve(n * group);
  for (std::size_t t = 0; t < n; ++t) {
    query_rows.push_back(t * group);
    for (std::size_t r = 0; r < group; ++r) {
      seq_rows.push_back(r == 0 ? 0 : 1 + t * layers + (r - 1));
      pos_rows.push_back(r);
    }
  }
  const Var<T> seq = add(gather_rows<T>(pool, seq_rows), gather_rows<T>(pos, pos_rows));
  const Var<T> u = block_forward(bind_block(params, "fusion.block."), seq, heads, group, false);
  const Var<T> u0 = gather_rows<T>(u, query_rows);
  const Var<T> scores = linear(u0, params["fusion.score.weight"], params["fusion.score.bias"]);
  const Var<T> alpha = softmax(scores, -1);
  return {weighted_layer_sum(stack, alpha), alpha};
}

template <typename T>
FusionOutput<T> fuse(const BoundParams<T>& params, Var<T> stack, const RunConfig& config) {
  switch (config.fusion_mode) {
    case FusionMode::kLast:
      return last_layer_fuse(stack);
    case FusionMode::kGlobal: {
      const Var<T> temp = config.temperature_mode == TemperatureMode::kLearned
                              ? params["fusion.temp"]
                              : Var<T>();
      return global_fuse(stack, global_alpha(params["fusion.w"], temp, config));
    }
    case FusionMode::kTokenwise:
      return tokenwise_fuse(params, stack, config.heads);
  }
  throw ContractError("unknown fusion mode");
}

template <typename T>
FusedSequence<T> fuse_values(const ParameterSet<T>& params, const Tensor<T>& stack,
                             const RunConfig& config) {
  Tape<T> tape(TapeOptions{.check_finite = config.check_finite, .record = false});
  const BoundParams<T> bound = params.bind(tape, false);
  const FusionOutput<T> out = fuse(bound, tape.constant(stack), config);
  return {out.vectors.value(), out.weights.value()};
}

#define LFUSE_INSTANTIATE_FUSION(T)                                                         \
  template void init_fusion_params(ParameterSet<T>&, const RunConfig&, Rng&);               \
  template Var<T> global_alpha(Var<T>, Var<T>, const RunConfig&);                           \
  template FusionOutput<T> global_fuse(Var<T>, Var<T>);                                     \
  template FusionOutput<T> last_layer_fuse(Var<T>);                                         \
  template FusionOutput<T> tokenwise_fuse(const BoundParams<T>&, Var<T>, std::size_t);      \
  template FusionOutput<T> fuse(const BoundParams<T>&, Var<T>, const RunConfig&);           \
  template FusedSequence<T> fuse_values(const ParameterSet<T>&, const Tensor<T>&,           \
                                        const RunConfig&);

LFUSE_INSTANTIATE_FUSION(float)
LFUSE_INSTANTIATE_FUSION(double)

}  // namespace lfuse
