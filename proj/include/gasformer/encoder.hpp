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

// Four-stage hierarchical transformer encoder (Mix Transformer family):
// overlapping patch embedding, efficient self-attention with spatial
// reduction of keys/values, Mix-FFN, no positional encoding.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gasformer/config.hpp"
#include "gasformer/ops.hpp"
#include "gasformer/params.hpp"

namespace gasformer {

template <typename T>
using StageFeatures = std::array<Var<T>, 4>;

namespace encoder_detail {

inline std::string stage_prefix(std::size_t i) { return "encoder.stage" + std::to_string(i + 1); }
inline std::string block_prefix(std::size_t i, std::size_t j) {
  return stage_prefix(i) + ".block" + std::to_string(j + 1);
}

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& name, std::size_t out, std::size_t in) {
  ps.add(name + ".weight", Tensor<T>(Shape{out, in}), ParamKind::linear_weight);
  ps.add(name + ".bias", Tensor<T>(Shape{out}), ParamKind::bias);
}

template <typename T>
void add_conv(ParamStore<T>& ps, const std::string& name, std::size_t out, std::size_t in_per_group, std::size_t k,
              std::size_t groups, bool bias) {
  ps.add(name + ".weight", Tensor<T>(Shape{out, in_per_group, k, k}), ParamKind::conv_weight, k * k * out / groups);
  if (bias) ps.add(name + ".bias", Tensor<T>(Shape{out}), ParamKind::bias);
}

template <typename T>
void add_norm(ParamStore<T>& ps, const std::string& name, std::size_t c) {
  ps.add(name + ".weight", Tensor<T>(Shape{c}, T(1)), ParamKind::norm_weight);
  ps.add(name + ".bias", Tensor<T>(Shape{c}), ParamKind::norm_bias);
}

}  // namespace encoder_detail

/// Registers all encoder parameters (zero-valued; `build` initializes).
template <typename T>
void register_encoder(ParamStore<T>& ps, const ModelConfig& cfg) {
  using namespace encoder_detail;
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    const StageConfig& s = cfg.stages[i];
    const std::size_t C = s.embed_dim, hid = C * s.mlp_ratio;
    const std::string sp = stage_prefix(i);
    add_conv(ps, sp + ".patch_embed.proj", C, cin, s.patch_kernel, 1, true);
    add_norm(ps, sp + ".patch_embed.norm", C);
    for (std::size_t j = 0; j < s.depth; ++j) {
      const std::string bp = block_prefix(i, j);
      add_norm(ps, bp + ".norm1", C);
      add_linear(ps, bp + ".attn.q", C, C);
      add_linear(ps, bp + ".attn.kv", 2 * C, C);
      add_linear(ps, bp + ".attn.proj", C, C);
      if (s.reduction_ratio > 1) {
        add_conv(ps, bp + ".attn.sr", C, C, s.reduction_ratio, 1, true);
        add_norm(ps, bp + ".attn.sr_norm", C);
      }
      add_norm(ps, bp + ".norm2", C);
      add_linear(ps, bp + ".ffn.fc1", hid, C);
      add_conv(ps, bp + ".ffn.dwconv", hid, 1, 3, hid, true);
      add_linear(ps, bp + ".ffn.fc2", C, hid);
    }
    add_norm(ps, sp + ".norm", C);
    cin = C;
  }
}

/// Forward-pass switches that are not part of the weights.
template <typename T>
struct ForwardContext {
  bool train = false;
  std::uint64_t nmf_seed = 0;
  /// When set, every attention weight matrix (heads x n x n_kv) is appended.
  std::vector<Tensor<T>>* attention_maps = nullptr;
};

/// Layer norm over the channel axis of a C x H x W map.
template <typename T>
Var<T> channel_layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6)) {
  using namespace ops;
  const Shape s = x.shape();
  Var<T> tokens = transpose(reshape(x, Shape{s[0], s[1] * s[2]}));
  return reshape(transpose(layer_norm(tokens, gamma, beta, eps)), s);
}

/// Strided-conv patch embedding followed by channel layer norm.
template <typename T>
Var<T> overlap_patch_embed(const BoundParams<T>& p, const std::string& prefix, Var<T> x, const StageConfig& s) {
  using namespace ops;
  Var<T> y = conv2d(x, p(prefix + ".proj.weight"), p(prefix + ".proj.bias"), {s.patch_stride, s.patch_pad, 1});
  return channel_layer_norm(y, p(prefix + ".norm.weight"), p(prefix + ".norm.bias"));
}

/// Multi-head attention over the tokens of a C x H x W map. Keys and values
/// come from the map reduced by a kernel-r, stride-r convolution (r > 1).
template <typename T>
Var<T> efficient_self_attention(const BoundParams<T>& p, const std::string& prefix, Var<T> x, std::size_t heads,
                                std::size_t reduction, const ForwardContext<T>* ctx = nullptr) {
  using namespace ops;
  const Shape s = x.shape();
  const std::size_t C = s[0], n = s[1] * s[2];
  if (reduction == 0) throw ConfigError("efficient_self_attention: reduction ratio must be >= 1");
  if (heads == 0 || C % heads != 0) throw ConfigError("efficient_self_attention: channels not divisible by heads");
  const std::size_t d = C / heads;
  Var<T> tokens = reshape(x, Shape{C, n});
  Var<T> q = add_bias_rows(matmul(p(prefix + ".q.weight"), tokens), p(prefix + ".q.bias"));
  Var<T> kv_src = tokens;
  if (reduction > 1) {
    Var<T> r = conv2d(x, p(prefix + ".sr.weight"), p(prefix + ".sr.bias"), {reduction, 0, 1});
    r = channel_layer_norm(r, p(prefix + ".sr_norm.weight"), p(prefix + ".sr_norm.bias"));
    const Shape rs = r.shape();
    kv_src = reshape(r, Shape{C, rs[1] * rs[2]});
  }
  const std::size_t nk = kv_src.shape()[1];
  Var<T> kv = add_bias_rows(matmul(p(prefix + ".kv.weight"), kv_src), p(prefix + ".kv.bias"));
  Var<T> k = reshape(slice0(kv, 0, C), Shape{heads, d, nk});
  Var<T> v = reshape(slice0(kv, C, 2 * C), Shape{heads, d, nk});
  Var<T> qh = reshape(q, Shape{heads, d, n});
  Var<T> scores = scale(matmul(qh, k, true, false), T(1) / std::sqrt(static_cast<T>(d)));
  Var<T> attn = softmax_lastdim(scores);
  if (ctx && ctx->attention_maps) ctx->attention_maps->push_back(attn.value());
  Var<T> out = reshape(matmul(v, attn, false, true), Shape{C, n});
  out = add_bias_rows(matmul(p(prefix + ".proj.weight"), out), p(prefix + ".proj.bias"));
  return reshape(out, s);
}

/// Mix-FFN branch: 1x1 expand, 3x3 depthwise conv, GELU, 1x1 project.
template <typename T>
Var<T> mix_ffn_branch(const BoundParams<T>& p, const std::string& prefix, Var<T> x) {
  using namespace ops;
  const Shape s = x.shape();
  const std::size_t n = s[1] * s[2];
  Var<T> h = add_bias_rows(matmul(p(prefix + ".fc1.weight"), reshape(x, Shape{s[0], n})), p(prefix + ".fc1.bias"));
  const std::size_t hid = h.shape()[0];
  h = reshape(h, Shape{hid, s[1], s[2]});
  h = conv2d(h, p(prefix + ".dwconv.weight"), p(prefix + ".dwconv.bias"), {1, 1, hid});
  h = gelu(h);
  Var<T> out = add_bias_rows(matmul(p(prefix + ".fc2.weight"), reshape(h, Shape{hid, n})), p(prefix + ".fc2.bias"));
  return reshape(out, s);
}

/// Mix-FFN with its residual connection: x + branch(x).
template <typename T>
Var<T> mix_ffn(const BoundParams<T>& p, const std::string& prefix, Var<T> x) {
  return ops::add(x, mix_ffn_branch(p, prefix, x));
}

/// Runs the four stages and returns F1..F4.
template <typename T>
StageFeatures<T> encode(const BoundParams<T>& p, const ModelConfig& cfg, Var<T> image,
                        const ForwardContext<T>* ctx = nullptr) {
  using namespace ops;
  using namespace encoder_detail;
  const Shape is = image.shape();
  if (is.size() != 3 || is[0] != cfg.in_channels)
    throw DimensionError("encode: expected " + std::to_string(cfg.in_channels) + " x H x W input, got " +
                         shape_str(is));
  if (is[1] % 32 != 0 || is[2] % 32 != 0)
    throw DimensionError("encode: input extents must be divisible by 32, got " + shape_str(is));
  StageFeatures<T> feats;
  Var<T> x = image;
  for (std::size_t i = 0; i < 4; ++i) {
    const StageConfig& s = cfg.stages[i];
    const std::string sp = stage_prefix(i);
    x = overlap_patch_embed(p, sp + ".patch_embed", x, s);
    for (std::size_t j = 0; j < s.depth; ++j) {
      const std::string bp = block_prefix(i, j);
      Var<T> y = channel_layer_norm(x, p(bp + ".norm1.weight"), p(bp + ".norm1.bias"));
      x = add(x, efficient_self_attention(p, bp + ".attn", y, s.heads, s.reduction_ratio, ctx));
      y = channel_layer_norm(x, p(bp + ".norm2.weight"), p(bp + ".norm2.bias"));
      x = add(x, mix_ffn_branch(p, bp + ".ffn", y));
    }
    x = channel_layer_norm(x, p(sp + ".norm.weight"), p(sp + ".norm.bias"));
    feats[i] = x;
  }
  return feats;
}

}  // namespace gasformer
