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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gasformer/decoder.hpp"
#include "gasformer/network.hpp"
#include "gasformer/nmf.hpp"
#include "test_support.hpp"

using namespace gasformer;
using gasformer::testing::random_tensor;

namespace {

Tensor<double> outer_rank(std::size_t d, std::size_t n, std::size_t rank, std::mt19937_64& rng, bool disjoint) {
  Tensor<double> D({d, rank}), C({rank, n});
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (std::size_t r = 0; r < rank; ++r) {
    for (std::size_t i = 0; i < d; ++i)
      if (!disjoint || i * rank / d == r) D.at(i, r) = u(rng);
    for (std::size_t j = 0; j < n; ++j)
      if (!disjoint || j * rank / n == r) C.at(r, j) = u(rng);
  }
  return gasformer::testing::naive_matmul(D, C);
}

double frob(const Tensor<double>& a) {
  double s = 0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Nmf, RankOneRecovery) {
  std::mt19937_64 rng(1);
  auto X = outer_rank(16, 64, 1, rng, false);
  auto r = nmf_decompose(X, 1, 100, 1e-6, 3);
  EXPECT_LE(r.errors.back() / frob(X), 1e-4);
}

TEST(Nmf, ZeroMatrixIsFixedPoint) {
  auto r = nmf_decompose(Tensor<double>({8, 12}), 4, 10, 1e-6, 1);
  for (double v : r.reconstruction.data()) EXPECT_LE(std::abs(v), 1e-6);
}

TEST(Nmf, ErrorNonIncreasingAndFactorsNonNegative) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto X = random_tensor<double>({16, 64}, rng, 0, 1);
    NmfFactors<double> f = nmf_detail::seeded_init<double>(16, 64, 4, trial);
    double prev = 1e300;
    for (int s = 0; s < 20; ++s) {
      nmf_detail::update(X, f, 1e-6);
      for (double v : f.dictionary.data()) ASSERT_GE(v, 0.0);
      for (double v : f.codes.data()) ASSERT_GE(v, 0.0);
      const double e = nmf_detail::frobenius_error(X, nmf_detail::product(f.dictionary, f.codes, false, false));
      EXPECT_LE(e, prev);
      prev = e;
    }
  }
}

TEST(Nmf, Preconditions) {
  Tensor<double> neg({2, 2}, {1, -1, 0, 1});
  EXPECT_THROW(nmf_decompose(neg, 1, 1, 1e-6, 0), DomainError);
  EXPECT_THROW(nmf_decompose(Tensor<double>({2, 3}), 3, 1, 1e-6, 0), ConfigError);
}

TEST(Nmf, OneStepAndUnrolledAgreeInValue) {
  std::mt19937_64 rng(3);
  auto X = random_tensor<double>({6, 10}, rng, 0, 1);
  const auto ref = nmf_decompose(X, 3, 5, 1e-6, 42).reconstruction;
  for (auto mode : {NmfGradient::one_step, NmfGradient::unrolled}) {
    Tape<double> t;
    auto x = t.leaf(X, true);
    auto y = nmf_reconstruct(x, 3, 5, 1e-6, 42, mode).value();
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Nmf, UnrolledGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::vector<Tensor<double>> in{random_tensor<double>({5, 7}, rng, 0.1, 1), random_tensor<double>({5, 7}, rng)};
  gasformer::testing::ScalarFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
    return ops::sum(ops::mul(nmf_reconstruct(v[0], 2, 4, 1e-6, 7, NmfGradient::unrolled), v[1]));
  };
  EXPECT_LE(gasformer::testing::gradient_check(f, in, 0), 1e-5);
}

namespace {

DecoderConfig ham_config(std::size_t c) {
  DecoderConfig dc;
  dc.ham_channels = c;
  dc.norm_groups = 1;
  dc.nmf_rank = 2;
  return dc;
}

ParamStore<double> ham_params(const DecoderConfig& dc, std::mt19937_64& rng, bool identity) {
  ModelConfig cfg = tiny_model_config();
  cfg.decoder = dc;
  ParamStore<double> all;
  register_decoder(all, cfg);
  ParamStore<double> ps;
  for (auto& e : all)
    if (e.name.rfind("decoder.ham.", 0) == 0) {
      Tensor<double> v = e.value;
      if (e.kind == ParamKind::conv_weight) {
        if (identity)
          for (std::size_t i = 0; i < dc.ham_channels; ++i) v[i * dc.ham_channels + i] = 1;
        else
          v = random_tensor<double>(v.shape(), rng, -0.5, 0.5);
      }
      ps.add(e.name, v, e.kind);
    }
  return ps;
}

}  // namespace

TEST(Hamburger, PreservesShape) {
  std::mt19937_64 rng(5);
  auto dc = ham_config(4);
  auto ps = ham_params(dc, rng, false);
  for (std::size_t H : {1, 3, 8}) {
    Tape<double> t;
    BoundParams<double> p(t, ps, false);
    EXPECT_EQ(hamburger(p, dc, t.leaf(random_tensor<double>({4, H, 5}, rng)), ForwardContext<double>{}).shape(),
              (Shape{4, H, 5}));
  }
}

TEST(Hamburger, ZeroLowerMapIsRectifiedResidual) {
  std::mt19937_64 rng(6);
  auto dc = ham_config(4);
  auto ps = ham_params(dc, rng, false);
  ps.at("decoder.ham.lower.weight").fill(0);
  Tape<double> t;
  BoundParams<double> p(t, ps, false);
  auto x = random_tensor<double>({4, 3, 3}, rng);
  auto y = hamburger(p, dc, t.leaf(x), ForwardContext<double>{}).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::max(0.0, x[i]), 1e-12);
}

TEST(Hamburger, IdentityMapsOnExactRankInputDoubleIt) {
  std::mt19937_64 rng(7);
  auto dc = ham_config(8);
  dc.ham_upper_norm = false;
  dc.nmf_steps_eval = 100;
  auto ps = ham_params(dc, rng, true);
  auto X = outer_rank(8, 36, 2, rng, true).reshaped({8, 6, 6});
  Tape<double> t;
  BoundParams<double> p(t, ps, false);
  auto y = hamburger(p, dc, t.leaf(X), ForwardContext<double>{}).value();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    num += (y[i] - 2 * X[i]) * (y[i] - 2 * X[i]);
    den += 4 * X[i] * X[i];
  }
  EXPECT_LE(std::sqrt(num / den), 2e-3);
}

TEST(Hamburger, ChannelMismatchRejected) {
  std::mt19937_64 rng(8);
  auto dc = ham_config(4);
  auto ps = ham_params(dc, rng, false);
  Tape<double> t;
  BoundParams<double> p(t, ps, false);
  EXPECT_THROW(hamburger(p, dc, t.leaf(Tensor<double>({3, 2, 2})), ForwardContext<double>{}), DimensionError);
}

TEST(Decode, LogitShapes) {
  std::mt19937_64 rng(9);
  for (auto [stages, classes, expect_grid] :
       std::vector<std::tuple<std::vector<std::size_t>, std::size_t, std::size_t>>{
           {{1, 2, 3, 4}, 11, 128}, {{2, 3, 4}, 11, 64}, {{1, 2, 3, 4}, 2, 128}}) {
    ModelConfig cfg = default_model_config(classes);
    cfg.decoder.input_stages = stages;
    auto m = build<float>(cfg, 1);
    Tape<float> t;
    BoundParams<float> p(t, m.params, false);
    auto logits = forward(p, cfg, t.leaf(random_tensor<float>({3, 512, 512}, rng)), ForwardContext<float>{});
    EXPECT_EQ(logits.shape(), (Shape{classes, expect_grid, expect_grid}));
  }
}

TEST(Decode, ConcatChannelCounts) {
  ModelConfig cfg = default_model_config();
  EXPECT_EQ(decoder_concat_channels(cfg), 512u);
  cfg.decoder.input_stages = {2, 3, 4};
  EXPECT_EQ(decoder_concat_channels(cfg), 480u);
}

TEST(Decode, MissingStageIsConfigError) {
  ModelConfig cfg = tiny_model_config();
  auto m = build<float>(cfg, 1);
  Tape<float> t;
  BoundParams<float> p(t, m.params, false);
  StageFeatures<float> feats = encode(p, cfg, t.leaf(Tensor<float>({3, 32, 32})));
  feats[0] = Var<float>{};
  EXPECT_THROW(decode(p, cfg, feats, ForwardContext<float>{}), ConfigError);
}

TEST(Decode, EvalIsBitIdenticalAcrossPasses) {
  ModelConfig cfg = tiny_model_config();
  auto m = build<float>(cfg, 3);
  std::mt19937_64 rng(10);
  auto x = random_tensor<float>({3, 64, 64}, rng);
  auto once = [&] {
    Tape<float> t;
    BoundParams<float> p(t, m.params, false);
    return forward(p, cfg, t.leaf(x), ForwardContext<float>{}).value();
  };
  EXPECT_EQ(once(), once());
}

TEST(Decode, DecoderParameterCountIsAnalytic) {
  for (std::size_t c : {128, 256, 512})
    for (auto stages : {std::vector<std::size_t>{1, 2, 3, 4}, std::vector<std::size_t>{2, 3, 4}}) {
      ModelConfig cfg = default_model_config();
      cfg.decoder.ham_channels = c;
      cfg.decoder.input_stages = stages;
      ParamStore<float> ps;
      register_decoder(ps, cfg);
      const std::size_t cc = decoder_concat_channels(cfg);
      // squeeze conv+GN, lower conv+bias, upper conv+GN, align conv+GN, classifier conv+bias
      const std::size_t expect = (cc * c + 2 * c) + (c * c + c) + (c * c + 2 * c) + (c * c + 2 * c) + (c * 11 + 11);
      EXPECT_EQ(ps.scalar_count(), expect);
    }
}
