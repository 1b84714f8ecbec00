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

// Non-negative matrix factorization by multiplicative updates, used as the
// global-context module of the Light-Ham decoder.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gasformer/autograd.hpp"
#include "gasformer/error.hpp"
#include "gasformer/kernels.hpp"
#include "gasformer/ops.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer {

/// X (d x n) ~= D (d x R) * C (R x n), all non-negative.
template <typename T>
struct NmfFactors {
  Tensor<T> dictionary;
  Tensor<T> codes;
};

template <typename T>
struct NmfResult {
  NmfFactors<T> factors;
  Tensor<T> reconstruction;
  /// Frobenius reconstruction error before the first step and after each step.
  std::vector<double> errors;
};

enum class NmfGradient { one_step, unrolled };

namespace nmf_detail {

template <typename T>
NmfFactors<T> seeded_init(std::size_t d, std::size_t n, std::size_t rank, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> D(Shape{d, rank}), C(Shape{rank, n});
  for (auto& v : D.data()) v = static_cast<T>(u(rng));
  for (auto& v : C.data()) v = static_cast<T>(u(rng));
  return {std::move(D), std::move(C)};
}

template <typename T>
Tensor<T> product(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  const std::size_t M = ta ? a.dim(1) : a.dim(0), K = ta ? a.dim(0) : a.dim(1);
  const std::size_t N = tb ? b.dim(0) : b.dim(1);
  Tensor<T> out(Shape{M, N});
  kernels::gemm(ta, tb, M, N, K, a.ptr(), b.ptr(), out.ptr(), false);
  return out;
}

// One multiplicative update: codes first, then dictionary.
template <typename T>
void update(const Tensor<T>& X, NmfFactors<T>& f, T eps) {
  Tensor<T>& D = f.dictionary;
  Tensor<T>& C = f.codes;
  {
    const Tensor<T> num = product(D, X, true, false);
    const Tensor<T> den = product(product(D, D, true, false), C, false, false);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= num[i] / (den[i] + eps);
  }
  {
    const Tensor<T> num = product(X, C, false, true);
    const Tensor<T> den = product(D, product(C, C, false, true), false, false);
    for (std::size_t i = 0; i < D.size(); ++i) D[i] *= num[i] / (den[i] + eps);
  }
}

template <typename T>
double frobenius_error(const Tensor<T>& X, const Tensor<T>& recon) {
  double s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double d = static_cast<double>(X[i]) - static_cast<double>(recon[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace nmf_detail

/// Runs `steps` multiplicative updates from a seeded uniform(0,1) start.
template <typename T>
NmfResult<T> nmf_decompose(const Tensor<T>& X, std::size_t rank, std::size_t steps, T eps, std::uint64_t seed) {
  if (X.rank() != 2) throw DimensionError("nmf_decompose expects a d x n matrix");
  for (T v : X.data())
    if (v < T(0)) throw DomainError("nmf_decompose: input has negative entries");
  if (rank == 0 || rank > std::min(X.dim(0), X.dim(1)))
    throw ConfigError("nmf_decompose: rank must be in [1, min(d, n)]");
  if (steps == 0) throw ConfigError("nmf_decompose: steps must be >= 1");
  if (!(eps > T(0))) throw ConfigError("nmf_decompose: eps must be positive");
  NmfResult<T> r;
  r.factors = nmf_detail::seeded_init<T>(X.dim(0), X.dim(1), rank, seed);
  r.errors.push_back(
      nmf_detail::frobenius_error(X, nmf_detail::product(r.factors.dictionary, r.factors.codes, false, false)));
  for (std::size_t s = 0; s < steps; ++s) {
    nmf_detail::update(X, r.factors, eps);
    r.reconstruction = nmf_detail::product(r.factors.dictionary, r.factors.codes, false, false);
    r.errors.push_back(nmf_detail::frobenius_error(X, r.reconstruction));
  }
  return r;
}

/// Differentiable NMF reconstruction D*C of a non-negative d x n node.
/// one_step: the first steps-1 updates run off the tape and only the last
/// update is differentiated. unrolled: every update is recorded.
template <typename T>
Var<T> nmf_reconstruct(Var<T> X, std::size_t rank, std::size_t steps, T eps, std::uint64_t seed, NmfGradient mode) {
  using namespace ops;
  const Tensor<T>& xv = X.value();
  if (xv.rank() != 2) throw DimensionError("nmf_reconstruct expects a d x n matrix");
  if (rank == 0 || rank > std::min(xv.dim(0), xv.dim(1)))
    throw ConfigError("nmf_reconstruct: rank must be in [1, min(d, n)]");
  if (steps == 0) throw ConfigError("nmf_reconstruct: steps must be >= 1");
  Tape<T>& tape = *X.tape;
  NmfFactors<T> f = nmf_detail::seeded_init<T>(xv.dim(0), xv.dim(1), rank, seed);
  std::size_t taped = steps;
  if (mode == NmfGradient::one_step || !tape.requires_grad(X.id)) {
    for (std::size_t s = 0; s + 1 < steps; ++s) nmf_detail::update(xv, f, eps);
    taped = 1;
  }
  Var<T> D = tape.leaf(std::move(f.dictionary));
  Var<T> C = tape.leaf(std::move(f.codes));
  for (std::size_t s = 0; s < taped; ++s) {
    C = mul(C, div(matmul(D, X, true, false), add_scalar(matmul(matmul(D, D, true, false), C), eps)));
    D = mul(D, div(matmul(X, C, false, true), add_scalar(matmul(D, matmul(C, C, false, true)), eps)));
  }
  return matmul(D, C);
}

}  // namespace gasformer
