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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gasformer/autograd.hpp"
#include "gasformer/kernels.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer::ops {

namespace detail {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw Error("operands live on different tapes");
  return *a.tape;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void axpy(std::span<const T> src, std::span<T> dst, T alpha = T(1)) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += alpha * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor<T> out = a.value();
  detail::axpy<T>(b.value().data(), out.data());
  return t.record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    if (t.requires_grad(ia)) detail::axpy<T>(g.data(), t.grad_buffer(ia).data());
    if (t.requires_grad(ib)) detail::axpy<T>(g.data(), t.grad_buffer(ib).data());
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor<T> out = a.value();
  detail::axpy<T>(b.value().data(), out.data(), T(-1));
  return t.record("sub", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    if (t.requires_grad(ia)) detail::axpy<T>(g.data(), t.grad_buffer(ia).data());
    if (t.requires_grad(ib)) detail::axpy<T>(g.data(), t.grad_buffer(ib).data(), T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Elementwise a / b.
template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("div", a.value(), b.value());
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return t.record("div", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape->record("scale", std::move(out), {a.id}, [ia = a.id, s](Tape<T>& t, int self) {
    detail::axpy<T>(t.node(self).grad.data(), t.grad_buffer(ia).data(), s);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += s;
  return a.tape->record("add_scalar", std::move(out), {a.id}, [ia = a.id](Tape<T>& t, int self) {
    detail::axpy<T>(t.node(self).grad.data(), t.grad_buffer(ia).data());
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return a.tape->record("relu", std::move(out), {a.id}, [ia = a.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& x = t.value(ia);
    Tensor<T>& gx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) gx[i] += g[i];
  });
}

/// Exact GELU, x * Phi(x).
template <typename T>
Var<T> gelu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
  return a.tape->record("gelu", std::move(out), {a.id}, [ia = a.id](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& x = t.value(ia);
    Tensor<T>& gx = t.grad_buffer(ia);
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = x[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

/// Stop-gradient: copies the value onto a fresh leaf.
template <typename T>
Var<T> detach(Var<T> a) {
  return a.tape->leaf(a.value(), false);
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  T s = T(0);
  for (T v : a.value().data()) s += v;
  return a.tape->record("sum", Tensor<T>::scalar(s), {a.id}, [ia = a.id](Tape<T>& t, int self) {
    const T g = t.node(self).grad[0];
    for (auto& v : t.grad_buffer(ia).data()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// ---------------------------------------------------------------- layout

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), {a.id}, [ia = a.id](Tape<T>& t, int self) {
    detail::axpy<T>(t.node(self).grad.data(), t.grad_buffer(ia).data());
  });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& x = a.value();
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("transpose expects rank 2 or 3");
  const std::size_t B = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t R = x.dim(x.rank() - 2), C = x.dim(x.rank() - 1);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor<T> out(s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) out[b * R * C + j * R + i] = x[b * R * C + i * C + j];
  return a.tape->record("transpose", std::move(out), {a.id}, [ia = a.id, B, R, C](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& gx = t.grad_buffer(ia);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) gx[b * R * C + i * C + j] += g[b * R * C + j * R + i];
  });
}

/// Rows [begin, end) along axis 0.
template <typename T>
Var<T> slice0(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& x = a.value();
  if (begin >= end || end > x.dim(0)) throw DimensionError("slice0: bad range");
  const std::size_t inner = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  std::vector<T> d(x.vec().begin() + begin * inner, x.vec().begin() + end * inner);
  return a.tape->record("slice0", Tensor<T>(s, std::move(d)), {a.id},
                        [ia = a.id, off = begin * inner](Tape<T>& t, int self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& gx = t.grad_buffer(ia);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
                        });
}

/// Concatenation along axis 0; trailing extents must agree.
template <typename T>
Var<T> concat0(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat0: no inputs");
  Tape<T>& t = *parts.front().tape;
  Shape s = parts.front().shape();
  std::size_t rows = 0;
  std::vector<int> ids;
  std::vector<T> d;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin() + 1, ps.end(), s.begin() + 1))
      throw DimensionError("concat0: trailing extents differ " + shape_str(ps) + " vs " + shape_str(s));
    rows += ps[0];
    ids.push_back(p.id);
    d.insert(d.end(), p.value().vec().begin(), p.value().vec().end());
  }
  s[0] = rows;
  return t.record("concat0", Tensor<T>(s, std::move(d)), ids, [ids](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    std::size_t off = 0;
    for (int id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Tensor<T>& gx = t.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[off + i];
      }
      off += n;
    }
  });
}

/// Adds b[c] to every element of x whose axis-0 index is c.
template <typename T>
Var<T> add_bias_rows(Var<T> x, Var<T> b) {
  Tape<T>& t = detail::same_tape(x, b);
  const Tensor<T>& xv = x.value();
  if (b.value().size() != xv.dim(0)) throw DimensionError("add_bias_rows: bias length mismatch");
  const std::size_t inner = xv.size() / xv.dim(0);
  Tensor<T> out = xv;
  for (std::size_t c = 0; c < xv.dim(0); ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += b.value()[c];
  return t.record("add_bias_rows", std::move(out), {x.id, b.id},
                  [ix = x.id, ib = b.id, rows = xv.dim(0), inner](Tape<T>& t, int self) {
                    const Tensor<T>& g = t.node(self).grad;
                    if (t.requires_grad(ix)) detail::axpy<T>(g.data(), t.grad_buffer(ix).data());
                    if (t.requires_grad(ib)) {
                      Tensor<T>& gb = t.grad_buffer(ib);
                      for (std::size_t c = 0; c < rows; ++c) {
                        T s = T(0);
                        for (std::size_t i = 0; i < inner; ++i) s += g[c * inner + i];
                        gb[c] += s;
                      }
                    }
                  });
}

// ---------------------------------------------------------------- matmul

/// op(a) * op(b) where op transposes the last two axes when requested.
/// Either operand may carry a leading batch axis; a rank-2 operand is
/// broadcast across the batch of the other.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if ((av.rank() != 2 && av.rank() != 3) || (bv.rank() != 2 && bv.rank() != 3))
    throw DimensionError("matmul expects rank-2 or rank-3 operands");
  const std::size_t ba = av.rank() == 3 ? av.dim(0) : 0;
  const std::size_t bb = bv.rank() == 3 ? bv.dim(0) : 0;
  if (ba && bb && ba != bb) throw DimensionError("matmul: batch extents differ");
  const std::size_t batch = std::max<std::size_t>({ba, bb, 1});
  const std::size_t ar = av.dim(av.rank() - 2), ac = av.dim(av.rank() - 1);
  const std::size_t br = bv.dim(bv.rank() - 2), bc = bv.dim(bv.rank() - 1);
  const std::size_t M = trans_a ? ac : ar, K = trans_a ? ar : ac;
  const std::size_t Kb = trans_b ? bc : br, N = trans_b ? br : bc;
  if (K != Kb)
    throw DimensionError("matmul: inner extents differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Shape s = (ba || bb) ? Shape{batch, M, N} : Shape{M, N};
  Tensor<T> out(s);
  const std::size_t sa = ba ? M * K : 0, sb = bb ? K * N : 0;
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm(trans_a, trans_b, M, N, K, av.ptr() + i * sa, bv.ptr() + i * sb, out.ptr() + i * M * N, false);
  return t.record("matmul", std::move(out), {a.id, b.id},
                  [ia = a.id, ib = b.id, trans_a, trans_b, batch, M, N, K, sa, sb](Tape<T>& t, int self) {
                    const Tensor<T>& g = t.node(self).grad;
                    const Tensor<T>& av = t.value(ia);
                    const Tensor<T>& bv = t.value(ib);
                    for (std::size_t i = 0; i < batch; ++i) {
                      const T* gi = g.ptr() + i * M * N;
                      const T* ai = av.ptr() + i * sa;
                      const T* bi = bv.ptr() + i * sb;
                      if (t.requires_grad(ia)) {
                        T* da = t.grad_buffer(ia).ptr() + i * sa;
                        if (!trans_a)
                          kernels::gemm(false, !trans_b, M, K, N, gi, bi, da, true);
                        else
                          kernels::gemm(trans_b, true, K, M, N, bi, gi, da, true);
                      }
                      if (t.requires_grad(ib)) {
                        T* db = t.grad_buffer(ib).ptr() + i * sb;
                        if (!trans_b)
                          kernels::gemm(!trans_a, false, K, N, M, ai, gi, db, true);
                        else
                          kernels::gemm(true, trans_a, N, K, M, gi, ai, db, true);
                      }
                    }
                  });
}

// ---------------------------------------------------------------- normalization

/// Softmax over the last axis with max subtraction.
template <typename T>
Var<T> softmax_lastdim(Var<T> a) {
  const Tensor<T>& x = a.value();
  const std::size_t L = x.dim(x.rank() - 1), rows = x.size() / L;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * L;
    T* yr = out.ptr() + r * L;
    const T m = *std::max_element(xr, xr + L);
    T s = T(0);
    for (std::size_t i = 0; i < L; ++i) s += (yr[i] = std::exp(xr[i] - m));
    for (std::size_t i = 0; i < L; ++i) yr[i] /= s;
  }
  return a.tape->record("softmax", std::move(out), {a.id}, [ia = a.id, L, rows](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& gx = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t i = 0; i < L; ++i) dot += g[r * L + i] * y[r * L + i];
      for (std::size_t i = 0; i < L; ++i) gx[r * L + i] += y[r * L + i] * (g[r * L + i] - dot);
    }
  });
}

namespace detail {

// Shared backward for affine normalizations: for each normalized slice of
// `count` elements, dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat)).
template <typename T>
void norm_slice_backward(const T* dxhat, const T* xhat, T rstd, std::size_t count, T* dx) {
  T m1 = T(0), m2 = T(0);
  for (std::size_t i = 0; i < count; ++i) {
    m1 += dxhat[i];
    m2 += dxhat[i] * xhat[i];
  }
  m1 /= static_cast<T>(count);
  m2 /= static_cast<T>(count);
  for (std::size_t i = 0; i < count; ++i) dx[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
}

}  // namespace detail

/// Layer normalization over the last axis.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6)) {
  Tape<T>& t = detail::same_tape(x, gamma);
  const Tensor<T>& xv = x.value();
  const std::size_t L = xv.dim(xv.rank() - 1), rows = xv.size() / L;
  if (gamma.value().size() != L || beta.value().size() != L)
    throw DimensionError("layer_norm: affine parameters must match the last axis");
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(rows);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.ptr() + r * L;
    T mu = T(0);
    for (std::size_t i = 0; i < L; ++i) mu += xr[i];
    mu /= static_cast<T>(L);
    T var = T(0);
    for (std::size_t i = 0; i < L; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(L);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < L; ++i) {
      const T h = (xr[i] - mu) * rstd[r];
      xhat[r * L + i] = h;
      out[r * L + i] = h * gamma.value()[i] + beta.value()[i];
    }
  }
  return t.record("layer_norm", std::move(out), {x.id, gamma.id, beta.id},
                  [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), rstd = std::move(rstd), L,
                   rows](Tape<T>& t, int self) {
                    const Tensor<T>& g = t.node(self).grad;
                    const Tensor<T>& gam = t.value(ig);
                    if (t.requires_grad(ig) || t.requires_grad(ib)) {
                      Tensor<T>& gg = t.grad_buffer(ig);
                      Tensor<T>& gb = t.grad_buffer(ib);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < L; ++i) {
                          gg[i] += g[r * L + i] * xhat[r * L + i];
                          gb[i] += g[r * L + i];
                        }
                    }
                    if (t.requires_grad(ix)) {
                      Tensor<T>& gx = t.grad_buffer(ix);
                      std::vector<T> dxhat(L);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t i = 0; i < L; ++i) dxhat[i] = g[r * L + i] * gam[i];
                        detail::norm_slice_backward(dxhat.data(), xhat.ptr() + r * L, rstd[r], L, gx.ptr() + r * L);
                      }
                    }
                  });
}

/// Group normalization of a C x H x W map with per-channel affine.
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::size_t groups, T eps = T(1e-5)) {
  Tape<T>& t = detail::same_tape(x, gamma);
  const Tensor<T>& xv = x.value();
  const std::size_t C = xv.dim(0);
  if (groups == 0 || C % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
  if (gamma.value().size() != C || beta.value().size() != C)
    throw DimensionError("group_norm: affine parameters must match channel count");
  const std::size_t hw = xv.size() / C, cpg = C / groups, count = cpg * hw;
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(groups);
  Tensor<T> out(xv.shape());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* xg = xv.ptr() + gi * count;
    T mu = T(0);
    for (std::size_t i = 0; i < count; ++i) mu += xg[i];
    mu /= static_cast<T>(count);
    T var = T(0);
    for (std::size_t i = 0; i < count; ++i) var += (xg[i] - mu) * (xg[i] - mu);
    var /= static_cast<T>(count);
    rstd[gi] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t c = gi * cpg + i / hw;
      const T h = (xg[i] - mu) * rstd[gi];
      xhat[gi * count + i] = h;
      out[gi * count + i] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return t.record("group_norm", std::move(out), {x.id, gamma.id, beta.id},
                  [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat), rstd = std::move(rstd), groups,
                   hw, cpg, count](Tape<T>& t, int self) {
                    const Tensor<T>& g = t.node(self).grad;
                    const Tensor<T>& gam = t.value(ig);
                    if (t.requires_grad(ig) || t.requires_grad(ib)) {
                      Tensor<T>& gg = t.grad_buffer(ig);
                      Tensor<T>& gb = t.grad_buffer(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        gg[i / hw] += g[i] * xhat[i];
                        gb[i / hw] += g[i];
                      }
                    }
                    if (t.requires_grad(ix)) {
                      Tensor<T>& gx = t.grad_buffer(ix);
                      std::vector<T> dxhat(count);
                      for (std::size_t gi = 0; gi < groups; ++gi) {
                        for (std::size_t i = 0; i < count; ++i)
                          dxhat[i] = g[gi * count + i] * gam[gi * cpg + i / hw];
                        detail::norm_slice_backward(dxhat.data(), xhat.ptr() + gi * count, rstd[gi], count,
                                                    gx.ptr() + gi * count);
                      }
                    }
                  });
}

// ---------------------------------------------------------------- spatial

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw DimensionError("conv2d: input smaller than kernel after padding");
  return (in + 2 * pad - k) / stride + 1;
}

/// 2-D convolution of a C_in x H x W map with weights C_out x (C_in/g) x k x k.
/// `bias` may be an invalid Var (no bias).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, Conv2dParams p) {
  Tape<T>& t = detail::same_tape(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4) throw DimensionError("conv2d expects CxHxW input and 4-D weights");
  if (p.groups == 0 || p.stride == 0) throw ConfigError("conv2d: groups and stride must be positive");
  const std::size_t cin = xv.dim(0), cout = wv.dim(0), k = wv.dim(2);
  if (cin % p.groups != 0 || cout % p.groups != 0) throw ConfigError("conv2d: channels not divisible by groups");
  if (wv.dim(1) != cin / p.groups || wv.dim(3) != k)
    throw DimensionError("conv2d: weight shape " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().size() != cout) throw DimensionError("conv2d: bias length mismatch");
  kernels::ConvGeometry g{cin, xv.dim(1), xv.dim(2), cout, k, p.stride, p.pad, p.groups,
                          conv_out_extent(xv.dim(1), k, p.stride, p.pad), conv_out_extent(xv.dim(2), k, p.stride, p.pad)};
  const std::size_t n = g.h_out * g.w_out;
  const std::size_t cin_g = cin / p.groups, cout_g = cout / p.groups, kk = cin_g * k * k;
  const bool pointwise = k == 1 && p.stride == 1 && p.pad == 0 && p.groups == 1;
  const bool depthwise = p.groups == cin && p.groups == cout;
  Tensor<T> out(Shape{cout, g.h_out, g.w_out});
  if (pointwise) {
    kernels::gemm(false, false, cout, n, cin, wv.ptr(), xv.ptr(), out.ptr(), false);
  } else if (depthwise) {
    kernels::depthwise_forward(xv.ptr(), wv.ptr(), g, out.ptr());
  } else {
    std::vector<T> cols(kk * n);
    for (std::size_t gi = 0; gi < p.groups; ++gi) {
      kernels::im2col(xv.ptr(), g, gi * cin_g, cin_g, cols.data());
      kernels::gemm(false, false, cout_g, n, kk, wv.ptr() + gi * cout_g * kk, cols.data(),
                    out.ptr() + gi * cout_g * n, false);
    }
  }
  if (has_bias)
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t i = 0; i < n; ++i) out[c * n + i] += bias.value()[c];
  std::vector<int> inputs{x.id, w.id};
  if (has_bias) inputs.push_back(bias.id);
  return t.record(
      "conv2d", std::move(out), inputs,
      [ix = x.id, iw = w.id, ib = has_bias ? bias.id : -1, g, n, cin_g, cout_g, kk, pointwise, depthwise](
          Tape<T>& t, int self) {
        const Tensor<T>& gy = t.node(self).grad;
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& wv = t.value(iw);
        const bool need_x = t.requires_grad(ix), need_w = t.requires_grad(iw);
        if (ib >= 0 && t.requires_grad(ib)) {
          Tensor<T>& gb = t.grad_buffer(ib);
          for (std::size_t c = 0; c < g.c_out; ++c) {
            T s = T(0);
            for (std::size_t i = 0; i < n; ++i) s += gy[c * n + i];
            gb[c] += s;
          }
        }
        if (pointwise) {
          if (need_w) kernels::gemm(false, true, g.c_out, g.c_in, n, gy.ptr(), xv.ptr(), t.grad_buffer(iw).ptr(), true);
          if (need_x) kernels::gemm(true, false, g.c_in, n, g.c_out, wv.ptr(), gy.ptr(), t.grad_buffer(ix).ptr(), true);
          return;
        }
        if (depthwise) {
          kernels::depthwise_backward(xv.ptr(), wv.ptr(), gy.ptr(), g, need_x ? t.grad_buffer(ix).ptr() : nullptr,
                                      need_w ? t.grad_buffer(iw).ptr() : nullptr);
          return;
        }
        std::vector<T> cols(kk * n), dcols(kk * n);
        for (std::size_t gi = 0; gi < g.groups; ++gi) {
          const T* gyg = gy.ptr() + gi * cout_g * n;
          if (need_w) {
            kernels::im2col(xv.ptr(), g, gi * cin_g, cin_g, cols.data());
            kernels::gemm(false, true, cout_g, kk, n, gyg, cols.data(), t.grad_buffer(iw).ptr() + gi * cout_g * kk, true);
          }
          if (need_x) {
            kernels::gemm(true, false, kk, n, cout_g, wv.ptr() + gi * cout_g * kk, gyg, dcols.data(), false);
            kernels::col2im(dcols.data(), g, gi * cin_g, cin_g, t.grad_buffer(ix).ptr());
          }
        }
      });
}

/// Bilinear resampling of a C x H x W map with half-pixel centres
/// (align_corners disabled); source reads are clamped to the border.
template <typename T>
Var<T> bilinear_resize(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("bilinear_resize expects a CxHxW map");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: target extents must be positive");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H == out_h && W == out_w)
    return x.tape->record("bilinear_resize", xv, {x.id}, [ix = x.id](Tape<T>& t, int self) {
      detail::axpy<T>(t.node(self).grad.data(), t.grad_buffer(ix).data());
    });
  const auto ty = kernels::bilinear_taps(H, out_h);
  const auto tx = kernels::bilinear_taps(W, out_w);
  Tensor<T> out(Shape{C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = xv.ptr() + c * H * W;
    T* yc = out.ptr() + c * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty[oy].frac);
      const T* r0 = xc + ty[oy].i0 * W;
      const T* r1 = xc + ty[oy].i1 * W;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx[ox].frac);
        const T top = r0[tx[ox].i0] * (T(1) - fx) + r0[tx[ox].i1] * fx;
        const T bot = r1[tx[ox].i0] * (T(1) - fx) + r1[tx[ox].i1] * fx;
        yc[oy * out_w + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return x.tape->record("bilinear_resize", std::move(out), {x.id},
                        [ix = x.id, C, H, W, out_h, out_w, ty, tx](Tape<T>& t, int self) {
                          const Tensor<T>& g = t.node(self).grad;
                          Tensor<T>& gx = t.grad_buffer(ix);
                          for (std::size_t c = 0; c < C; ++c) {
                            T* dc = gx.ptr() + c * H * W;
                            const T* gc = g.ptr() + c * out_h * out_w;
                            for (std::size_t oy = 0; oy < out_h; ++oy) {
                              const T fy = static_cast<T>(ty[oy].frac);
                              T* r0 = dc + ty[oy].i0 * W;
                              T* r1 = dc + ty[oy].i1 * W;
                              for (std::size_t ox = 0; ox < out_w; ++ox) {
                                const T fx = static_cast<T>(tx[ox].frac);
                                const T d = gc[oy * out_w + ox];
                                r0[tx[ox].i0] += d * (T(1) - fy) * (T(1) - fx);
                                r0[tx[ox].i1] += d * (T(1) - fy) * fx;
                                r1[tx[ox].i0] += d * fy * (T(1) - fx);
                                r1[tx[ox].i1] += d * fy * fx;
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------- loss

struct CrossEntropyInfo {
  std::size_t scored_pixels = 0;
  bool all_ignored = false;
};

/// Mean per-pixel cross-entropy of K x H x W logits against an H x W label
/// grid. Pixels equal to `ignore_index` are skipped; when every pixel is
/// ignored the loss is 0 and `info->all_ignored` is set.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint8_t> target, int ignore_index,
                     CrossEntropyInfo* info = nullptr) {
  const Tensor<T>& lv = logits.value();
  if (lv.rank() != 3) throw DimensionError("cross_entropy expects K x H x W logits");
  const std::size_t K = lv.dim(0), P = lv.dim(1) * lv.dim(2);
  if (target.size() != P) throw DimensionError("cross_entropy: target extent mismatch");
  Tensor<T> probs(lv.shape());
  double loss = 0;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < P; ++p) {
    T m = lv[p];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, lv[k * P + p]);
    T s = T(0);
    for (std::size_t k = 0; k < K; ++k) s += (probs[k * P + p] = std::exp(lv[k * P + p] - m));
    for (std::size_t k = 0; k < K; ++k) probs[k * P + p] /= s;
    const int tgt = target[p];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= K)
      throw DataError("cross_entropy: label " + std::to_string(tgt) + " out of range");
    loss += -(static_cast<double>(lv[tgt * P + p] - m) - std::log(static_cast<double>(s)));
    ++valid;
  }
  if (info) {
    info->scored_pixels = valid;
    info->all_ignored = valid == 0;
  }
  const T value = valid ? static_cast<T>(loss / static_cast<double>(valid)) : T(0);
  std::vector<std::uint8_t> tgt(target.begin(), target.end());
  return logits.tape->record(
      "cross_entropy", Tensor<T>::scalar(value), {logits.id},
      [il = logits.id, probs = std::move(probs), tgt = std::move(tgt), ignore_index, valid, K, P](Tape<T>& t,
                                                                                                   int self) {
        if (valid == 0) return;
        const T g = t.node(self).grad[0] / static_cast<T>(valid);
        Tensor<T>& gl = t.grad_buffer(il);
        for (std::size_t p = 0; p < P; ++p) {
          if (tgt[p] == ignore_index) continue;
          for (std::size_t k = 0; k < K; ++k) gl[k * P + p] += g * probs[k * P + p];
          gl[tgt[p] * P + p] -= g;
        }
      });
}

}  // namespace gasformer::ops
