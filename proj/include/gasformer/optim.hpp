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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gasformer/checkpoint.hpp"
#include "gasformer/error.hpp"
#include "gasformer/params.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer {

struct ScheduleConfig {
  double base_lr = 6e-5;
  std::uint64_t warmup_iters = 1500;
  double warmup_start_factor = 1e-6;
  std::uint64_t total_iters = 160000;
  double poly_power = 1.0;
  double min_lr = 0.0;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

inline void validate(const ScheduleConfig& s) {
  if (!(s.base_lr > 0)) throw ConfigError("schedule.base_lr must be positive");
  if (s.warmup_iters >= s.total_iters) throw ConfigError("schedule.warmup_iters must be below total_iters");
  if (!(s.warmup_start_factor > 0 && s.warmup_start_factor <= 1))
    throw ConfigError("schedule.warmup_start_factor must be in (0, 1]");
  if (!(s.poly_power > 0)) throw ConfigError("schedule.poly_power must be positive");
  if (!(s.min_lr >= 0 && s.min_lr <= s.base_lr)) throw ConfigError("schedule.min_lr must be in [0, base_lr]");
}

/// Linear warmup from base_lr * start_factor, then polynomial decay to min_lr
/// at total_iters.
inline double lr_at(std::uint64_t iter, const ScheduleConfig& s) {
  if (iter > s.total_iters)
    throw DomainError("lr_at: iteration " + std::to_string(iter) + " outside [0, " + std::to_string(s.total_iters) + "]");
  if (iter < s.warmup_iters) {
    const double t = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    return s.base_lr * (s.warmup_start_factor + (1.0 - s.warmup_start_factor) * t);
  }
  const double t = static_cast<double>(iter - s.warmup_iters) / static_cast<double>(s.total_iters - s.warmup_iters);
  return (s.base_lr - s.min_lr) * std::pow(1.0 - t, s.poly_power) + s.min_lr;
}

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> m, v;  // parallel to the parameter store
  std::uint64_t t = 0;
};

template <typename T>
OptimState<T> make_optim_state(const ParamStore<T>& params) {
  OptimState<T> s;
  for (const auto& e : params) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

/// One AdamW step with decoupled decay. `grads[i]` may be empty (treated as
/// zero). Norm parameters and biases are not decayed. `lr_scale[i]`, when
/// given, multiplies the learning rate of parameter i.
template <typename T>
void adamw_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, OptimState<T>& state, double lr,
                const AdamConfig& cfg = {}, const std::vector<double>* lr_scale = nullptr) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw DimensionError("adamw_step: parameter/gradient/state counts differ");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    const Tensor<T>& g = grads[i];
    if (!g.empty() && g.shape() != e.value.shape()) throw DimensionError("adamw_step: gradient shape mismatch for " + e.name);
    const double plr = lr * (lr_scale ? (*lr_scale)[i] : 1.0);
    const double decay = ParamStore<T>::decays(e.kind) ? 1.0 - plr * cfg.weight_decay : 1.0;
    T* w = e.value.ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
      double wj = static_cast<double>(w[j]) * decay;
      const double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      wj -= plr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      w[j] = static_cast<T>(wj);
    }
  }
}

/// Optimizer moments as checkpoint records.
inline std::vector<NamedTensor> optim_records(const ParamStore<float>& params, const OptimState<float>& s) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"optim.m." + params[i].name, s.m[i]});
    out.push_back({"optim.v." + params[i].name, s.v[i]});
  }
  out.push_back({"optim.step", Tensor<float>(Shape{1}, static_cast<float>(s.t))});
  return out;
}

/// Restores moments from checkpoint records; a checkpoint without them
/// yields a fresh state.
inline OptimState<float> optim_from_records(const ParamStore<float>& params, const std::vector<NamedTensor>& records) {
  OptimState<float> s = make_optim_state(params);
  std::size_t found = 0;
  for (const auto& r : records) {
    if (r.name == "optim.step") {
      s.t = static_cast<std::uint64_t>(r.value[0]);
      continue;
    }
    const bool is_m = r.name.rfind("optim.m.", 0) == 0, is_v = r.name.rfind("optim.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const std::string pname = r.name.substr(8);
    if (!params.contains(pname)) continue;
    const std::size_t i = params.index(pname);
    if (r.value.shape() != params[i].value.shape()) throw FormatError("optimizer record shape mismatch for " + pname);
    (is_m ? s.m : s.v)[i] = r.value;
    ++found;
  }
  if (found != 0 && found != 2 * params.size()) throw FormatError("checkpoint has partial optimizer state");
  return s;
}

inline nlohmann::json to_json(const ScheduleConfig& s) {
  return {{"base_lr", s.base_lr},         {"warmup_iters", s.warmup_iters}, {"warmup_start_factor", s.warmup_start_factor},
          {"total_iters", s.total_iters}, {"poly_power", s.poly_power},     {"min_lr", s.min_lr}};
}

inline nlohmann::json to_json(const AdamConfig& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

}  // namespace gasformer
