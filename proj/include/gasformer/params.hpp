/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "gasformer/autograd.hpp"
#include "gasformer/error.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer {

enum class ParamKind { linear_weight, conv_weight, bias, norm_weight, norm_bias };

/// Ordered named parameter set. Order is the registration order and is the
/// order used by checkpoints and optimizers.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    ParamKind kind;
    std::size_t fan_out = 1;  // conv init scale
  };

  void add(std::string name, Tensor<T> value, ParamKind kind, std::size_t fan_out = 1) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), kind, fan_out});
  }

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Tensor<T>& at(const std::string& name) { return entries_[index(name)].value; }
  const Tensor<T>& at(const std::string& name) const { return entries_[index(name)].value; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Weight decay applies to linear and conv weights only.
  static bool decays(ParamKind k) { return k == ParamKind::linear_weight || k == ParamKind::conv_weight; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape for one forward pass.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ParamStore<T>& store, bool requires_grad) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& e : store) vars_.push_back(tape.leaf(e.value, requires_grad));
  }

  Var<T> operator()(const std::string& name) const { return vars_[store_->index(name)]; }
  Var<T> at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  bool contains(const std::string& name) const { return store_->contains(name); }

 private:
  const ParamStore<T>* store_;
  std::vector<Var<T>> vars_;
};

}  // namespace gasformer
