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

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gasformer/error.hpp"
#include "gasformer/nmf.hpp"

namespace gasformer {

using Json = nlohmann::json;

/// One encoder stage: overlapping patch embedding followed by `depth`
/// transformer blocks.
struct StageConfig {
  std::size_t patch_kernel = 3;
  std::size_t patch_stride = 2;
  std::size_t patch_pad = 1;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 1;
  std::size_t reduction_ratio = 1;
  std::size_t mlp_ratio = 4;

  std::size_t head_dim() const { return embed_dim / heads; }
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct DecoderConfig {
  /// Encoder stages fed to the decoder, 1-based (F1..F4), ascending.
  std::vector<std::size_t> input_stages{1, 2, 3, 4};
  std::size_t ham_channels = 256;
  std::size_t norm_groups = 32;
  std::size_t nmf_rank = 64;
  std::size_t nmf_steps_train = 6;
  std::size_t nmf_steps_eval = 7;
  double nmf_eps = 1e-6;
  std::uint64_t nmf_eval_seed = 0;
  NmfGradient nmf_grad = NmfGradient::one_step;
  /// GroupNorm after the upper 1x1 map of the hamburger.
  bool ham_upper_norm = true;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct ModelConfig {
  std::size_t in_channels = 3;
  std::array<StageConfig, 4> stages{};
  DecoderConfig decoder{};
  std::size_t num_classes = 11;
  int ignore_index = 255;
  std::array<double, 3> norm_mean{123.675, 116.28, 103.53};
  std::array<double, 3> norm_std{58.395, 57.12, 57.375};

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Reference B0-scale widths: dims (32,64,160,256), depths 2, heads
/// (1,2,5,8), reduction ratios (8,4,2,1).
inline std::array<StageConfig, 4> b0_stages() {
  const std::size_t dims[4] = {32, 64, 160, 256};
  const std::size_t heads[4] = {1, 2, 5, 8};
  const std::size_t sr[4] = {8, 4, 2, 1};
  std::array<StageConfig, 4> s{};
  for (std::size_t i = 0; i < 4; ++i) {
    s[i].patch_kernel = i == 0 ? 7 : 3;
    s[i].patch_stride = i == 0 ? 4 : 2;
    s[i].patch_pad = i == 0 ? 3 : 1;
    s[i].embed_dim = dims[i];
    s[i].depth = 2;
    s[i].heads = heads[i];
    s[i].reduction_ratio = sr[i];
    s[i].mlp_ratio = 4;
  }
  return s;
}

/// Default model: B0 encoder, 4-stage Light-Ham decoder with 256 channels.
inline ModelConfig default_model_config(std::size_t num_classes = 11) {
  ModelConfig c;
  c.stages = b0_stages();
  c.num_classes = num_classes;
  return c;
}

/// Small configuration for gradient checks and desk-scale training:
/// stage dims 8/16/24/32, depth 1, decoder width 32.
inline ModelConfig tiny_model_config(std::size_t num_classes = 3) {
  ModelConfig c;
  c.stages = b0_stages();
  const std::size_t dims[4] = {8, 16, 24, 32};
  const std::size_t heads[4] = {1, 2, 3, 4};
  const std::size_t sr[4] = {4, 2, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    c.stages[i].embed_dim = dims[i];
    c.stages[i].depth = 1;
    c.stages[i].heads = heads[i];
    c.stages[i].reduction_ratio = sr[i];
    c.stages[i].mlp_ratio = 2;
  }
  c.decoder.ham_channels = 32;
  c.decoder.norm_groups = 8;
  c.decoder.nmf_rank = 8;
  c.num_classes = num_classes;
  return c;
}

inline void validate(const ModelConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid config field '" + field + "': " + why);
  };
  if (c.in_channels == 0) fail("in_channels", "must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    const StageConfig& s = c.stages[i];
    const std::string f = "stages[" + std::to_string(i) + "].";
    if (s.patch_kernel == 0) fail(f + "patch_kernel", "must be positive");
    if (s.patch_stride == 0) fail(f + "patch_stride", "must be positive");
    if (s.embed_dim == 0) fail(f + "embed_dim", "must be positive");
    if (s.heads == 0 || s.embed_dim % s.heads != 0) fail(f + "heads", "embed_dim must be divisible by heads");
    if (s.reduction_ratio == 0) fail(f + "reduction_ratio", "must be >= 1");
    if (s.mlp_ratio == 0) fail(f + "mlp_ratio", "must be >= 1");
  }
  const DecoderConfig& d = c.decoder;
  if (d.input_stages.empty()) fail("decoder.input_stages", "must select at least one stage");
  for (std::size_t i = 0; i < d.input_stages.size(); ++i) {
    if (d.input_stages[i] < 1 || d.input_stages[i] > 4) fail("decoder.input_stages", "entries must be in 1..4");
    if (i && d.input_stages[i] <= d.input_stages[i - 1]) fail("decoder.input_stages", "must be strictly ascending");
  }
  std::size_t widest = 0;
  for (std::size_t s : d.input_stages) widest = std::max(widest, c.stages[s - 1].embed_dim);
  if (c.stages[3].embed_dim < widest) fail("stages[3].embed_dim", "stage 4 must be the widest decoder input");
  if (d.ham_channels == 0) fail("decoder.ham_channels", "must be positive");
  if (d.norm_groups == 0 || d.ham_channels % d.norm_groups != 0)
    fail("decoder.norm_groups", "ham_channels must be divisible by norm_groups");
  if (d.nmf_rank == 0) fail("decoder.nmf_rank", "must be >= 1");
  if (d.nmf_steps_train == 0) fail("decoder.nmf_steps_train", "must be >= 1");
  if (d.nmf_steps_eval == 0) fail("decoder.nmf_steps_eval", "must be >= 1");
  if (!(d.nmf_eps > 0)) fail("decoder.nmf_eps", "must be > 0");
  if (c.num_classes < 2 || c.num_classes > 255) fail("num_classes", "must be in [2, 255]");
  if (c.ignore_index >= 0 && static_cast<std::size_t>(c.ignore_index) < c.num_classes)
    fail("ignore_index", "must not collide with a class index");
  for (std::size_t i = 0; i < 3; ++i)
    if (!(c.norm_std[i] > 0)) fail("norm_std", "must be positive");
}

// ------------------------------------------------------------------ JSON

namespace json_detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError("expected an object for '" + where + "'");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <typename V>
void read(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
  }
}

}  // namespace json_detail

inline Json to_json(const StageConfig& s) {
  return Json{{"patch_kernel", s.patch_kernel}, {"patch_stride", s.patch_stride},
              {"patch_pad", s.patch_pad},       {"embed_dim", s.embed_dim},
              {"depth", s.depth},               {"heads", s.heads},
              {"reduction_ratio", s.reduction_ratio}, {"mlp_ratio", s.mlp_ratio}};
}

inline StageConfig stage_from_json(const Json& j, const std::string& where) {
  json_detail::reject_unknown(
      j, {"patch_kernel", "patch_stride", "patch_pad", "embed_dim", "depth", "heads", "reduction_ratio", "mlp_ratio"},
      where);
  StageConfig s;
  json_detail::read(j, "patch_kernel", s.patch_kernel, where);
  json_detail::read(j, "patch_stride", s.patch_stride, where);
  json_detail::read(j, "patch_pad", s.patch_pad, where);
  json_detail::read(j, "embed_dim", s.embed_dim, where);
  json_detail::read(j, "depth", s.depth, where);
  json_detail::read(j, "heads", s.heads, where);
  json_detail::read(j, "reduction_ratio", s.reduction_ratio, where);
  json_detail::read(j, "mlp_ratio", s.mlp_ratio, where);
  return s;
}

inline Json to_json(const DecoderConfig& d) {
  return Json{{"input_stages", d.input_stages},
              {"ham_channels", d.ham_channels},
              {"norm_groups", d.norm_groups},
              {"nmf_rank", d.nmf_rank},
              {"nmf_steps_train", d.nmf_steps_train},
              {"nmf_steps_eval", d.nmf_steps_eval},
              {"nmf_eps", d.nmf_eps},
              {"nmf_eval_seed", d.nmf_eval_seed},
              {"nmf_grad", d.nmf_grad == NmfGradient::one_step ? "one_step" : "unrolled"},
              {"ham_upper_norm", d.ham_upper_norm}};
}

inline DecoderConfig decoder_from_json(const Json& j, const std::string& where) {
  json_detail::reject_unknown(j,
                              {"input_stages", "ham_channels", "norm_groups", "nmf_rank", "nmf_steps_train",
                               "nmf_steps_eval", "nmf_eps", "nmf_eval_seed", "nmf_grad", "ham_upper_norm"},
                              where);
  DecoderConfig d;
  json_detail::read(j, "input_stages", d.input_stages, where);
  json_detail::read(j, "ham_channels", d.ham_channels, where);
  json_detail::read(j, "norm_groups", d.norm_groups, where);
  json_detail::read(j, "nmf_rank", d.nmf_rank, where);
  json_detail::read(j, "nmf_steps_train", d.nmf_steps_train, where);
  json_detail::read(j, "nmf_steps_eval", d.nmf_steps_eval, where);
  json_detail::read(j, "nmf_eps", d.nmf_eps, where);
  json_detail::read(j, "nmf_eval_seed", d.nmf_eval_seed, where);
  json_detail::read(j, "ham_upper_norm", d.ham_upper_norm, where);
  if (j.contains("nmf_grad")) {
    std::string g;
    json_detail::read(j, "nmf_grad", g, where);
    if (g == "one_step") d.nmf_grad = NmfGradient::one_step;
    else if (g == "unrolled") d.nmf_grad = NmfGradient::unrolled;
    else throw ConfigError("bad value for '" + where + ".nmf_grad': expected one_step or unrolled");
  }
  return d;
}

inline Json to_json(const ModelConfig& c) {
  Json stages = Json::array();
  for (const auto& s : c.stages) stages.push_back(to_json(s));
  return Json{{"in_channels", c.in_channels}, {"stages", stages},
              {"decoder", to_json(c.decoder)}, {"num_classes", c.num_classes},
              {"ignore_index", c.ignore_index}, {"norm_mean", c.norm_mean},
              {"norm_std", c.norm_std}};
}

/// Parses a model config; absent keys keep the B0 defaults, unknown keys
/// raise ConfigError naming the key.
inline ModelConfig model_from_json(const Json& j, const std::string& where = "model") {
  json_detail::reject_unknown(
      j, {"in_channels", "stages", "decoder", "num_classes", "ignore_index", "norm_mean", "norm_std"}, where);
  ModelConfig c = default_model_config();
  json_detail::read(j, "in_channels", c.in_channels, where);
  if (j.contains("stages")) {
    const Json& s = j.at("stages");
    if (!s.is_array() || s.size() != 4) throw ConfigError("'" + where + ".stages' must list exactly four stages");
    for (std::size_t i = 0; i < 4; ++i) c.stages[i] = stage_from_json(s[i], where + ".stages[" + std::to_string(i) + "]");
  }
  if (j.contains("decoder")) c.decoder = decoder_from_json(j.at("decoder"), where + ".decoder");
  json_detail::read(j, "num_classes", c.num_classes, where);
  json_detail::read(j, "ignore_index", c.ignore_index, where);
  json_detail::read(j, "norm_mean", c.norm_mean, where);
  json_detail::read(j, "norm_std", c.norm_std, where);
  validate(c);
  return c;
}

/// Canonical JSON text: sorted keys, compact separators.
inline std::string canonical_json(const Json& j) { return j.dump(); }

}  // namespace gasformer
