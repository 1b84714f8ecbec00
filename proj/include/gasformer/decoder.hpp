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

// Light-Ham decoder: concatenate multi-level features on a common grid,
// squeeze, refine with an NMF "hamburger", align, classify.

#include <algorithm>
#include <string>
#include <vector>

#include "gasformer/config.hpp"
#include "gasformer/encoder.hpp"
#include "gasformer/nmf.hpp"
#include "gasformer/ops.hpp"
#include "gasformer/params.hpp"

namespace gasformer {

inline std::size_t decoder_concat_channels(const ModelConfig& cfg) {
  std::size_t c = 0;
  for (std::size_t s : cfg.decoder.input_stages) c += cfg.stages[s - 1].embed_dim;
  return c;
}

template <typename T>
void register_decoder(ParamStore<T>& ps, const ModelConfig& cfg) {
  using encoder_detail::add_conv;
  using encoder_detail::add_norm;
  const std::size_t c = cfg.decoder.ham_channels;
  add_conv(ps, "decoder.squeeze.conv", c, decoder_concat_channels(cfg), 1, 1, false);
  add_norm(ps, "decoder.squeeze.gn", c);
  add_conv(ps, "decoder.ham.lower", c, c, 1, 1, true);
  add_conv(ps, "decoder.ham.upper", c, c, 1, 1, !cfg.decoder.ham_upper_norm);
  if (cfg.decoder.ham_upper_norm) add_norm(ps, "decoder.ham.upper_gn", c);
  add_conv(ps, "decoder.align.conv", c, c, 1, 1, false);
  add_norm(ps, "decoder.align.gn", c);
  add_conv(ps, "decoder.classifier", cfg.num_classes, c, 1, 1, true);
}

template <typename T>
Var<T> optional_param(const BoundParams<T>& p, const std::string& name) {
  return p.contains(name) ? p(name) : Var<T>{};
}

/// Lower 1x1 map, ReLU, NMF reconstruction, upper 1x1 map (+GroupNorm),
/// residual add, ReLU.
template <typename T>
Var<T> hamburger(const BoundParams<T>& p, const DecoderConfig& dc, Var<T> x, const ForwardContext<T>& ctx) {
  using namespace ops;
  const Shape s = x.shape();
  if (s[0] != dc.ham_channels)
    throw DimensionError("hamburger: expected " + std::to_string(dc.ham_channels) + " channels, got " +
                         std::to_string(s[0]));
  const std::size_t n = s[1] * s[2];
  Var<T> e = relu(conv2d(x, p("decoder.ham.lower.weight"), p("decoder.ham.lower.bias"), {}));
  const std::size_t rank = std::min({dc.nmf_rank, s[0], n});
  const std::size_t steps = ctx.train ? dc.nmf_steps_train : dc.nmf_steps_eval;
  const std::uint64_t seed = ctx.train ? ctx.nmf_seed : dc.nmf_eval_seed;
  Var<T> recon = nmf_reconstruct(reshape(e, Shape{s[0], n}), rank, steps, static_cast<T>(dc.nmf_eps), seed,
                                 dc.nmf_grad);
  Var<T> u = conv2d(reshape(recon, s), p("decoder.ham.upper.weight"), optional_param(p, "decoder.ham.upper.bias"), {});
  if (dc.ham_upper_norm)
    u = group_norm(u, p("decoder.ham.upper_gn.weight"), p("decoder.ham.upper_gn.bias"), dc.norm_groups);
  return relu(add(x, u));
}

/// Grid the decoder works on: that of the first selected stage.
template <typename T>
std::pair<std::size_t, std::size_t> decode_grid(const StageFeatures<T>& feats, const DecoderConfig& dc) {
  const Shape& s = feats[dc.input_stages.front() - 1].shape();
  return {s[1], s[2]};
}

/// Produces num_classes x h x w logits on the grid of the first selected stage.
template <typename T>
Var<T> decode(const BoundParams<T>& p, const ModelConfig& cfg, const StageFeatures<T>& feats,
              const ForwardContext<T>& ctx) {
  using namespace ops;
  const DecoderConfig& dc = cfg.decoder;
  for (std::size_t s : dc.input_stages)
    if (s < 1 || s > 4 || !feats[s - 1].valid()) throw ConfigError("decode: missing stage F" + std::to_string(s));
  const auto [gh, gw] = decode_grid(feats, dc);
  std::vector<Var<T>> parts;
  for (std::size_t s : dc.input_stages) parts.push_back(bilinear_resize(feats[s - 1], gh, gw));
  Var<T> x = concat0(parts);
  x = conv2d(x, p("decoder.squeeze.conv.weight"), Var<T>{}, {});
  x = relu(group_norm(x, p("decoder.squeeze.gn.weight"), p("decoder.squeeze.gn.bias"), dc.norm_groups));
  x = hamburger(p, dc, x, ctx);
  x = conv2d(x, p("decoder.align.conv.weight"), Var<T>{}, {});
  x = relu(group_norm(x, p("decoder.align.gn.weight"), p("decoder.align.gn.bias"), dc.norm_groups));
  return conv2d(x, p("decoder.classifier.weight"), p("decoder.classifier.bias"), {});
}

}  // namespace gasformer
