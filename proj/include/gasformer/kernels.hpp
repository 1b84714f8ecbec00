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

// Raw compute kernels over contiguous row-major buffers. No allocation
// policy, no shape checking: the differentiable ops in ops.hpp own both.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace gasformer::kernels {

/// C (+)= op(A) * op(B), with op(A) M x K and op(B) K x N.
/// A is stored M x K (or K x M when trans_a); B is K x N (or N x K when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K,
          const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T(0));
  if (trans_b && trans_a) {
    std::vector<T> bt(K * N);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t p = 0; p < K; ++p) bt[p * N + j] = B[j * K + p];
    gemm(true, false, M, N, K, A, bt.data(), C, true);
    return;
  }
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      const T* a = A + i * K;
      for (std::size_t p = 0; p < K; ++p) {
        const T av = a[p];
        if (av == T(0)) continue;
        const T* b = B + p * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < M; ++i) {
      const T* a = A + i * K;
      for (std::size_t j = 0; j < N; ++j) {
        const T* b = B + j * K;
        T s = T(0);
        for (std::size_t p = 0; p < K; ++p) s += a[p] * b[p];
        C[i * N + j] += s;
      }
    }
  } else {
    for (std::size_t p = 0; p < K; ++p) {
      const T* a = A + p * M;
      const T* b = B + p * N;
      for (std::size_t i = 0; i < M; ++i) {
        const T av = a[i];
        if (av == T(0)) continue;
        T* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, pad, groups, h_out, w_out;
};

/// Unfolds one group of a CHW image into a (cin_g*k*k) x (h_out*w_out) matrix.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t c_begin, std::size_t c_count, T* cols) {
  const std::size_t n = g.h_out * g.w_out;
  for (std::size_t c = 0; c < c_count; ++c) {
    const T* xc = x + (c_begin + c) * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * n;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* r = row + oy * g.w_out;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(r, r + g.w_out, T(0));
            continue;
          }
          const T* xr = xc + iy * g.w;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            r[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : xr[ix];
          }
        }
      }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, std::size_t c_begin, std::size_t c_count, T* dx) {
  const std::size_t n = g.h_out * g.w_out;
  for (std::size_t c = 0; c < c_count; ++c) {
    T* xc = dx + (c_begin + c) * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * n;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* xr = xc + iy * g.w;
          const T* r = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) xr[ix] += r[ox];
          }
        }
      }
  }
}

/// Depthwise convolution (one input channel per group, one output per group).
template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvGeometry& g, T* y) {
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.c_out; ++c) {
    const T* xc = x + c * g.h * g.w;
    const T* wc = w + c * g.k * g.k;
    T* yc = y + c * g.h_out * g.w_out;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        T s = T(0);
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= H) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= W) continue;
            s += wc[ky * g.k + kx] * xc[iy * W + ix];
          }
        }
        yc[oy * g.w_out + ox] = s;
      }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw) {
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.c_out; ++c) {
    const T* xc = x + c * g.h * g.w;
    const T* wc = w + c * g.k * g.k;
    const T* dyc = dy + c * g.h_out * g.w_out;
    T* dxc = dx ? dx + c * g.h * g.w : nullptr;
    T* dwc = dw ? dw + c * g.k * g.k : nullptr;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        const T d = dyc[oy * g.w_out + ox];
        if (d == T(0)) continue;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= H) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= W) continue;
            if (dwc) dwc[ky * g.k + kx] += d * xc[iy * W + ix];
            if (dxc) dxc[iy * W + ix] += d * wc[ky * g.k + kx];
          }
        }
      }
  }
}

/// Half-pixel-centre source coordinate with edge clamping.
struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

inline std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace gasformer::kernels
