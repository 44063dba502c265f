#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lfuse/error.hpp"
#include "lfuse/tape.hpp"

namespace lfuse {

template <typename T>
using NamedGradients = std::map<std::string, Tensor<T>>;

template <typename T>
class BoundParams;

// Named tensors kept in canonical (lexicographic) order. Values are shared
// immutably with any tape that binds them; updates replace the pointer.
template <typename T>
class ParameterSet {
 public:
  using TensorPtr = std::shared_ptr<const Tensor<T>>;

  void add(const std::string& name, Tensor<T> value) {
    if (!entries_.emplace(name, std::make_shared<const Tensor<T>>(std::move(value))).second) {
      throw ContractError("parameter '" + name + "' registered twice");
    }
  }

  void set(const std::string& name, Tensor<T> value) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    if (it->second->shape() != value.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " +
                           shape_string(it->second->shape()) + ", got " +
                           shape_string(value.shape()));
    }
    it->second = std::make_shared<const Tensor<T>>(std::move(value));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const { return *ptr(name); }

  const TensorPtr& ptr(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t->numel();
    return n;
  }

  const std::map<std::string, TensorPtr>& entries() const { return entries_; }

  // Records every entry on `tape`, as trainable leaves or as constants.
  BoundParams<T> bind(Tape<T>& tape, bool trainable) const;

 private:
  std::map<std::string, TensorPtr> entries_;
};

// Name -> Var view of a ParameterSet on one tape.
template <typename T>
class BoundParams {
 public:
  Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("parameter '" + name + "' is not bound");
    return it->second;
  }

  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  void insert(const std::string& name, Var<T> v) { vars_[name] = v; }

  // Renames tape-id keyed gradients to parameter names.
  NamedGradients<T> name_gradients(Gradients<T> grads) const {
    NamedGradients<T> out;
    for (const auto& [name, var] : vars_) {
      auto it = grads.find(var.id());
      if (it != grads.end()) out.emplace(name, std::move(it->second));
    }
    return out;
  }

 private:
  std::map<std::string, Var<T>> vars_;
};

template <typename T>
BoundParams<T> ParameterSet<T>::bind(Tape<T>& tape, bool trainable) const {
  BoundParams<T> out;
  for (const auto& [name, t] : entries_) {
    out.insert(name, trainable ? tape.parameter(t) : tape.constant(t));
  }
  return out;
}

}  // namespace lfuse
