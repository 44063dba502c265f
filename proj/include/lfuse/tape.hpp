#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lfuse/error.hpp"
#include "lfuse/tensor.hpp"

namespace lfuse {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Gradients of a backward pass keyed by the id of each parameter leaf.
template <typename T>
using Gradients = std::map<std::uint32_t, Tensor<T>>;

struct TapeOptions {
  // Raise NumericError as soon as an op produces NaN/Inf.
  bool check_finite = false;
  // When false nothing is retained for backward (inference).
  bool record = true;
};

// Linear record of executed ops. Node ids are assigned in execution order, so
// every input precedes its consumers and reverse id order is a valid
// topological order for the backward sweep.
template <typename T>
class Tape {
 public:
  using TensorPtr = std::shared_ptr<const Tensor<T>>;
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const TapeOptions& options() const { return options_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    return constant(std::make_shared<const Tensor<T>>(std::move(value)));
  }

  Var<T> constant(TensorPtr value) {
    return push("constant", std::move(value), {}, false, false, nullptr);
  }

  // Trainable leaf. Its gradient is reported by backward().
  Var<T> parameter(TensorPtr value) {
    return push("parameter", std::move(value), {}, options_.record, true,
                nullptr);
  }

  Var<T> parameter(Tensor<T> value) {
    return parameter(std::make_shared<const Tensor<T>>(std::move(value)));
  }

  // Records the result of an op. The backward rule is kept only if some
  // input requires a gradient.
  Var<T> record(std::string_view op, Tensor<T> value,
                std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return record(op, std::move(value),
                  std::span<const Var<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var<T> record(std::string_view op, Tensor<T> value,
                std::span<const Var<T>> inputs, BackwardFn backward) {
    return record(op, std::make_shared<const Tensor<T>>(std::move(value)), inputs,
                  std::move(backward));
  }

  // Variant for rules that need the output value itself.
  Var<T> record(std::string_view op, TensorPtr value,
                std::span<const Var<T>> inputs, BackwardFn backward) {
    bool needs_grad = false;
    std::vector<std::uint32_t> ids;
    ids.reserve(inputs.size());
    for (const Var<T>& in : inputs) {
      if (in.tape() != this) {
        throw ContractError(std::string(op) + ": input belongs to another tape");
      }
      ids.push_back(in.id());
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    needs_grad = needs_grad && options_.record;
    return push(op, std::move(value), std::move(ids), needs_grad, false,
                needs_grad ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(std::uint32_t id) const { return *nodes_.at(id).value; }
  bool requires_grad(std::uint32_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op_name(std::uint32_t id) const { return nodes_.at(id).op; }
  const std::vector<std::uint32_t>& inputs(std::uint32_t id) const {
    return nodes_.at(id).inputs;
  }

  // Gradient accumulator of `v` during a backward sweep, zero on first touch.
  Tensor<T>& grad_slot(Var<T> v) {
    auto& slot = grads_.at(v.id());
    if (!slot) slot.emplace(value(v.id()).shape());
    return *slot;
  }

  // Reverse sweep from a scalar loss. Each node's rule runs at most once.
  // Only parameter leaves reachable from the loss appear in the result.
  Gradients<T> backward(Var<T> loss) {
    if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
    const Tensor<T>& lv = value(loss.id());
    if (lv.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_string(lv.shape()));
    }
    Gradients<T> out;
    if (!nodes_[loss.id()].requires_grad) return out;

    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.id()].emplace(Tensor<T>::filled(lv.shape(), T(1)));
    for (std::int64_t id = loss.id(); id >= 0; --id) {
      Node& node = nodes_[id];
      auto& g = grads_[id];
      if (!g) continue;
      if (node.is_parameter) {
        out.emplace(static_cast<std::uint32_t>(id), std::move(*g));
      } else if (node.backward) {
        node.backward(*g);
      }
      g.reset();
    }
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    std::string op;
    TensorPtr value;
    std::vector<std::uint32_t> inputs;
    bool requires_grad = false;
    bool is_parameter = false;
    BackwardFn backward;
  };

  Var<T> push(std::string_view op, TensorPtr value,
              std::vector<std::uint32_t> inputs, bool requires_grad,
              bool is_parameter, BackwardFn backward) {
    if (options_.check_finite && !value->all_finite()) {
      throw NumericError("non-finite value produced by '" + std::string(op) +
                         "' (shape " + shape_string(value->shape()) + ")");
    }
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{std::string(op), std::move(value), std::move(inputs),
                          requires_grad, is_parameter, std::move(backward)});
    return Var<T>(this, id);
  }

  TapeOptions options_;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
};

}  // namespace lfuse
