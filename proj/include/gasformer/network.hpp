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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gasformer/config.hpp"
#include "gasformer/decoder.hpp"
#include "gasformer/encoder.hpp"
#include "gasformer/image.hpp"
#include "gasformer/params.hpp"

namespace gasformer {

/// Encoder + Light-Ham decoder with its parameters.
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.config = config;
    for (const auto& e : params) m.params.add(e.name, e.value.template cast<U>(), e.kind, e.fan_out);
    return m;
  }
};

namespace init_detail {

inline double truncated_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double z = n(rng);
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

template <typename T>
void init_entry(typename ParamStore<T>::Entry& e, std::mt19937_64& rng) {
  switch (e.kind) {
    case ParamKind::linear_weight:
      for (auto& v : e.value.data()) v = static_cast<T>(truncated_normal(rng, 0.02));
      break;
    case ParamKind::conv_weight: {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(e.fan_out)));
      for (auto& v : e.value.data()) v = static_cast<T>(n(rng));
      break;
    }
    case ParamKind::norm_weight:
      e.value.fill(T(1));
      break;
    case ParamKind::bias:
    case ParamKind::norm_bias:
      e.value.fill(T(0));
      break;
  }
}

}  // namespace init_detail

/// Registers and initializes every parameter. Deterministic given `seed`.
template <typename T>
Model<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Model<T> m;
  m.config = cfg;
  register_encoder(m.params, cfg);
  register_decoder(m.params, cfg);
  std::mt19937_64 rng(seed);
  for (auto& e : m.params) init_detail::init_entry<T>(e, rng);
  return m;
}

/// Re-initializes one parameter from its own seeded stream.
template <typename T>
void reinit_param(Model<T>& m, const std::string& name, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  init_detail::init_entry<T>(m.params[m.params.index(name)], rng);
}

/// Logits on the decoder grid for an image whose extents are multiples of 32.
template <typename T>
Var<T> forward(const BoundParams<T>& p, const ModelConfig& cfg, Var<T> image, const ForwardContext<T>& ctx) {
  StageFeatures<T> feats = encode(p, cfg, image, &ctx);
  return decode(p, cfg, feats, ctx);
}

inline std::size_t round_up32(std::size_t v) { return (v + 31) / 32 * 32; }

/// Maps a 0-255 image to the model's input normalization.
template <typename T>
Tensor<T> normalize_image(const Tensor<float>& image, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) throw DimensionError("normalize_image: bad image shape");
  Tensor<T> out(image.shape());
  const std::size_t hw = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    const double mean = cfg.norm_mean[c % 3], stdv = cfg.norm_std[c % 3];
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = static_cast<T>((image[c * hw + i] - mean) / stdv);
  }
  return out;
}

/// Zero-pads a C x H x W map at the bottom/right to the given extents.
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, std::size_t h, std::size_t w) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (h == H && w == W) return x;
  Tensor<T> out(Shape{C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out.at(c, y, xx) = x.at(c, y, xx);
  return out;
}

template <typename T>
struct InferResult {
  LabelMap labels;
  /// num_classes x H x W softmax probabilities, when requested.
  std::optional<Tensor<T>> probabilities;
};

/// Dense prediction for a pre-normalized C x H x W image of any size: pads
/// to multiples of 32, upsamples logits to the padded size, crops back.
template <typename T>
InferResult<T> infer(const Model<T>& model, const Tensor<T>& image, bool with_probabilities = false) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  const std::size_t Hp = round_up32(H), Wp = round_up32(W);
  Tape<T> tape;
  BoundParams<T> p(tape, model.params, false);
  ForwardContext<T> ctx;
  Var<T> x = tape.leaf(pad_bottom_right(image, Hp, Wp));
  Var<T> logits = ops::bilinear_resize(forward(p, model.config, x, ctx), Hp, Wp);
  const Tensor<T>& lv = logits.value();
  const std::size_t K = lv.dim(0), P = Hp * Wp;
  InferResult<T> r;
  r.labels = LabelMap(W, H);
  if (with_probabilities) r.probabilities = Tensor<T>(Shape{K, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t xx = 0; xx < W; ++xx) {
      const std::size_t pix = y * Wp + xx;
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k)
        if (lv[k * P + pix] > lv[best * P + pix]) best = k;
      r.labels.at(xx, y) = static_cast<std::uint8_t>(best);
      if (with_probabilities) {
        const T m = lv[best * P + pix];
        T s = T(0);
        for (std::size_t k = 0; k < K; ++k) s += std::exp(lv[k * P + pix] - m);
        for (std::size_t k = 0; k < K; ++k) r.probabilities->at(k, y, xx) = std::exp(lv[k * P + pix] - m) / s;
      }
    }
  return r;
}

template <typename T>
std::size_t count_params(const Model<T>& m) {
  return m.params.scalar_count();
}

/// Closed-form parameter count from the configuration alone.
inline std::size_t count_params_analytic(const ModelConfig& cfg) {
  std::size_t n = 0, cin = cfg.in_channels;
  for (const StageConfig& s : cfg.stages) {
    const std::size_t C = s.embed_dim, hid = C * s.mlp_ratio, k = s.patch_kernel, r = s.reduction_ratio;
    n += cin * C * k * k + C + 2 * C;
    std::size_t block = 2 * C + (C * C + C) + (2 * C * C + 2 * C) + (C * C + C) + 2 * C;
    if (r > 1) block += C * C * r * r + C + 2 * C;
    block += (C * hid + hid) + (9 * hid + hid) + (hid * C + C);
    n += s.depth * block + 2 * C;
    cin = C;
  }
  const std::size_t c = cfg.decoder.ham_channels, cc = decoder_concat_channels(cfg);
  n += cc * c + 2 * c;
  n += c * c + c;
  n += c * c + (cfg.decoder.ham_upper_norm ? 2 * c : c);
  n += c * c + 2 * c;
  n += c * cfg.num_classes + cfg.num_classes;
  return n;
}

struct FlopEntry {
  std::string name;
  std::uint64_t macs = 0;
};

struct FlopReport {
  static constexpr const char* convention =
      "MACs (1 multiply-accumulate = 1 FLOP) of conv/linear layers and attention QK^T/AV products; "
      "NMF iterations reported separately";
  std::vector<FlopEntry> entries;
  std::uint64_t total_macs = 0;
  /// Multiply-accumulates of the NMF iterations in eval mode, not in total.
  std::uint64_t nmf_macs = 0;
  double gflops() const { return static_cast<double>(total_macs) / 1e9; }
};

/// Analytic per-layer MAC count for an H x W input (extents multiples of 32).
inline FlopReport count_flops(const ModelConfig& cfg, std::size_t H = 512, std::size_t W = 512) {
  validate(cfg);
  if (H % 32 || W % 32) throw DimensionError("count_flops: input extents must be divisible by 32");
  FlopReport rep;
  auto add = [&](std::string name, std::uint64_t macs) {
    rep.entries.push_back({std::move(name), macs});
    rep.total_macs += macs;
  };
  std::size_t h = H, w = W, cin = cfg.in_channels;
  std::array<std::pair<std::size_t, std::size_t>, 4> grids{};
  for (std::size_t i = 0; i < 4; ++i) {
    const StageConfig& s = cfg.stages[i];
    const std::size_t C = s.embed_dim, hid = C * s.mlp_ratio, r = s.reduction_ratio;
    h = ops::conv_out_extent(h, s.patch_kernel, s.patch_stride, s.patch_pad);
    w = ops::conv_out_extent(w, s.patch_kernel, s.patch_stride, s.patch_pad);
    grids[i] = {h, w};
    const std::uint64_t n = h * w;
    const std::string sp = encoder_detail::stage_prefix(i);
    add(sp + ".patch_embed.proj", static_cast<std::uint64_t>(cin) * C * s.patch_kernel * s.patch_kernel * n);
    for (std::size_t j = 0; j < s.depth; ++j) {
      const std::string bp = encoder_detail::block_prefix(i, j);
      std::uint64_t nk = n;
      add(bp + ".attn.q", static_cast<std::uint64_t>(C) * C * n);
      if (r > 1) {
        nk = static_cast<std::uint64_t>(ops::conv_out_extent(h, r, r, 0)) * ops::conv_out_extent(w, r, r, 0);
        add(bp + ".attn.sr", static_cast<std::uint64_t>(C) * C * r * r * nk);
      }
      add(bp + ".attn.kv", 2ull * C * C * nk);
      add(bp + ".attn.qk", static_cast<std::uint64_t>(C) * n * nk);
      add(bp + ".attn.av", static_cast<std::uint64_t>(C) * n * nk);
      add(bp + ".attn.proj", static_cast<std::uint64_t>(C) * C * n);
      add(bp + ".ffn.fc1", static_cast<std::uint64_t>(C) * hid * n);
      add(bp + ".ffn.dwconv", 9ull * hid * n);
      add(bp + ".ffn.fc2", static_cast<std::uint64_t>(hid) * C * n);
    }
    cin = C;
  }
  const auto [gh, gw] = grids[cfg.decoder.input_stages.front() - 1];
  const std::uint64_t n = gh * gw, c = cfg.decoder.ham_channels;
  add("decoder.squeeze.conv", decoder_concat_channels(cfg) * c * n);
  add("decoder.ham.lower", c * c * n);
  add("decoder.ham.upper", c * c * n);
  add("decoder.align.conv", c * c * n);
  add("decoder.classifier", c * cfg.num_classes * n);
  const std::uint64_t R = std::min<std::uint64_t>({cfg.decoder.nmf_rank, c, n});
  // Per update: D^T X, (D^T D) C, D^T D, X C^T, C C^T, D (C C^T); then D C.
  const std::uint64_t step = c * n * R + R * R * n + c * R * R + c * n * R + R * R * n + c * R * R;
  rep.nmf_macs = cfg.decoder.nmf_steps_eval * step + c * n * R;
  return rep;
}

}  // namespace gasformer
