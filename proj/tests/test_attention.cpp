// Copyright 2026 The mtl-attn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtl/attention.hpp"
#include "mtl/errors.hpp"
#include "support.hpp"

namespace mtl {
namespace {

using test::random_tensor;

struct Fixture {
  ParameterSet params;
  AttentionParams attn;

  Fixture(std::size_t d_in, std::size_t d_out, std::size_t heads, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    attn = AttentionParams::create(params, "attn", d_in, d_out, heads, rng);
  }
};

std::vector<std::vector<double>> reference_mha(const Tensor& x, const AttentionParams& p) {
  return test::ref_mha(test::to_mat(x), p);
}

TEST(CausalMask, LowerTriangular) {
  CausalMask m(4);
  const auto mat = m.matrix();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(mat[i][j], j <= i);
  }
  EXPECT_THROW(CausalMask(0), DimensionError);
}

TEST(AttentionParams, HeadsMustDivideWidth) {
  ParameterSet ps;
  std::mt19937_64 rng(0);
  EXPECT_THROW(AttentionParams::create(ps, "a", 4, 6, 4, rng), ConfigError);
  Fixture f(4, 8, 2);
  EXPECT_EQ(f.params.numel(), AttentionParams::count(4, 8, 2));
  EXPECT_EQ(AttentionParams::count(4, 8, 2), 3u * 4 * 8 + 8 * 8);
  EXPECT_TRUE(f.params.contains("attn/head/1/wv"));
  EXPECT_TRUE(f.params.contains("attn/w_multi"));
}

TEST(AttentionScores, SinglePositionAndZeroWeights) {
  Fixture f(3, 4, 1);
  std::mt19937_64 rng(2);
  ad::Tape tape;
  const Tensor s = attention_scores(tape.constant(random_tensor({1, 3}, rng)), f.attn, 0, 1).value();
  EXPECT_EQ(s.shape(), (Shape{1, 1}));
  *f.attn.wq[0] = Tensor({3, 4});
  *f.attn.wk[0] = Tensor({3, 4});
  const Tensor z = attention_scores(tape.constant(random_tensor({5, 3}, rng)), f.attn, 0, 5).value();
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionScores, HandCase) {
  Fixture f(2, 2, 1);
  *f.attn.wq[0] = Tensor::matrix(2, 2, {1, 0, 0, 1});
  *f.attn.wk[0] = Tensor::matrix(2, 2, {1, 0, 0, 1});
  ad::Tape tape;
  const Tensor e = attention_scores(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), f.attn, 0, 2).value();
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(e.at(0, 0), r, 1e-15);
  EXPECT_EQ(e.at(0, 1), 0.0);
  EXPECT_EQ(e.at(1, 0), 0.0);
  EXPECT_NEAR(e.at(1, 1), r, 1e-15);
}

TEST(MaskedSoftmax, FirstRowAndUniformRows) {
  ad::Tape tape;
  const Tensor a = masked_softmax(tape.constant(Tensor({5, 5}, 0.3)), CausalMask(5)).value();
  EXPECT_EQ(a.at(0, 0), 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (j <= i) {
        EXPECT_NEAR(a.at(i, j), 1.0 / static_cast<double>(i + 1), 1e-15);
      } else {
        EXPECT_EQ(a.at(i, j), 0.0);
      }
    }
  }
}

TEST(MaskedSoftmax, MatchesPrefixFormula) {
  std::mt19937_64 rng(3);
  Tensor s = random_tensor({4, 4}, rng, -3, 3);
  ad::Tape tape;
  const Tensor a = masked_softmax(tape.constant(s), CausalMask(4)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) z += std::exp(s.at(i, j));
    for (std::size_t j = 0; j <= i; ++j) EXPECT_NEAR(a.at(i, j), std::exp(s.at(i, j)) / z, 1e-12);
  }
}

TEST(Attend, IdentityAndUniformWeights) {
  Fixture f(3, 2, 1);
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 3}, rng);
  const Tensor& wv = *f.attn.wv[0];
  ad::Tape tape;
  const Tensor z = attend(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})), tape.constant(x), f.attn, 0, 2).value();
  const Tensor m = attend(tape.constant(Tensor::matrix(2, 2, {1, 0, 0.5, 0.5})), tape.constant(x), f.attn, 0, 2).value();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double xv = 0.0;
      for (std::size_t r = 0; r < 3; ++r) xv += x.at(i, r) * wv.at(r, c);
      EXPECT_NEAR(z.at(i, c), xv, 1e-15);
    }
  }
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(m.at(1, c), 0.5 * (z.at(0, c) + z.at(1, c)), 1e-15);
}

TEST(Attend, MatchesDoubleLoop) {
  Fixture f(3, 4, 2);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor alpha = random_tensor({5, 5}, rng, 0, 1);
  const Tensor& wv = *f.attn.wv[1];
  ad::Tape tape;
  const Tensor z = attend(tape.constant(alpha), tape.constant(x), f.attn, 1, 5).value();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        double v = 0.0;
        for (std::size_t r = 0; r < 3; ++r) v += x.at(j, r) * wv.at(r, c);
        ref += alpha.at(i, j) * v;
      }
      EXPECT_NEAR(z.at(i, c), ref, 1e-12);
    }
  }
}

TEST(MultiHead, SingleHeadReducesToAttention) {
  Fixture f(4, 4, 1);
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({6, 4}, rng);
  ad::Tape tape;
  auto xv = tape.constant(x);
  CausalMask mask(6);
  auto single = attend(masked_softmax(attention_scores(xv, f.attn, 0, 6), mask), xv, f.attn, 0, 6);
  const Tensor ref = ad::matmul(single, tape.parameter(*f.attn.w_multi)).value();
  const Tensor out = multi_head_attention(xv, f.attn, mask, 0.0, false).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], ref[i]);
}

TEST(MultiHead, MatchesBruteForce) {
  Fixture f(4, 4, 2, 7);
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({3, 4}, rng);
  ad::Tape tape;
  const Tensor out = multi_head_attention(tape.constant(x), f.attn, CausalMask(3), 0.0, false).value();
  const auto ref = reference_mha(x, f.attn);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, c), ref[i][c], 1e-12);
  }
}

TEST(MultiHead, BatchedSequencesAreIndependent) {
  Fixture f(4, 4, 2, 8);
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  Tensor both({6, 4});
  std::copy(a.data().begin(), a.data().end(), both.data().begin());
  std::copy(b.data().begin(), b.data().end(), both.data().begin() + 12);
  ad::Tape tape;
  const Tensor out = multi_head_attention(tape.constant(both), f.attn, CausalMask(3), 0.0, false).value();
  const auto ra = reference_mha(a, f.attn), rb = reference_mha(b, f.attn);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.at(i, c), ra[i][c], 1e-12);
      EXPECT_NEAR(out.at(3 + i, c), rb[i][c], 1e-12);
    }
  }
}

TEST(MultiHead, HeadPermutationInvariance) {
  Fixture f(4, 6, 3, 9);
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({5, 4}, rng);
  ad::Tape tape;
  const Tensor before = multi_head_attention(tape.constant(x), f.attn, CausalMask(5), 0.0, false).value();
  // Swap heads 0 and 2 together with their row blocks of W^multi.
  std::swap(*f.attn.wq[0], *f.attn.wq[2]);
  std::swap(*f.attn.wk[0], *f.attn.wk[2]);
  std::swap(*f.attn.wv[0], *f.attn.wv[2]);
  Tensor& wm = *f.attn.w_multi;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 6; ++c) std::swap(wm.at(r, c), wm.at(4 + r, c));
  }
  ad::Tape tape2;
  const Tensor after = multi_head_attention(tape2.constant(x), f.attn, CausalMask(5), 0.0, false).value();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], before[i], 1e-14);
}

TEST(MultiHead, CausalityIsBitwise) {
  Fixture f(4, 4, 2, 10);
  std::mt19937_64 rng(10);
  const std::size_t n = 7;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({n, 4}, rng);
    ad::Tape t1;
    const Tensor base = multi_head_attention(t1.constant(x), f.attn, CausalMask(n), 0.0, false).value();
    const std::size_t j = 1 + static_cast<std::size_t>(trial) % (n - 1);
    for (std::size_t c = 0; c < 4; ++c) x.at(j, c) += 10.0;
    ad::Tape t2;
    const Tensor pert = multi_head_attention(t2.constant(x), f.attn, CausalMask(n), 0.0, false).value();
    for (std::size_t i = 0; i < j * 4; ++i) EXPECT_EQ(base[i], pert[i]);
  }
}

TEST(MultiHead, GradientMatchesFiniteDifferences) {
  Fixture f(4, 4, 2, 11);
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({6, 4}, rng);
  // Two sequences of length 3.
  LossBuilder loss = [&](ad::Tape& tape) {
    return test::weighted_sum(multi_head_attention(tape.constant(x), f.attn, CausalMask(3), 0.0, false));
  };
  const GradcheckReport r = finite_diff_check(loss, f.params);
  EXPECT_TRUE(r.passed(1e-4)) << r.worst_path << " " << r.worst;

  std::vector<Tensor> in = {x};
  EXPECT_LT(test::max_grad_error(
                [&](ad::Tape&, auto& v) { return test::weighted_sum(multi_head_attention(v[0], f.attn, CausalMask(3), 0.0, false)); },
                in),
            1e-4);
}

TEST(MultiHead, AttentionDropoutOnlyInTraining) {
  Fixture f(4, 4, 2, 12);
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({4, 4}, rng);
  ad::Tape t1(5), t2(5), t3(6);
  const Tensor eval = multi_head_attention(t1.constant(x), f.attn, CausalMask(4), 0.5, false).value();
  const Tensor train_a = multi_head_attention(t2.constant(x), f.attn, CausalMask(4), 0.5, true).value();
  const Tensor train_b = multi_head_attention(t3.constant(x), f.attn, CausalMask(4), 0.5, true).value();
  const auto ref = reference_mha(x, f.attn);
  bool differs = false;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    EXPECT_NEAR(eval[i], ref[i / 4][i % 4], 1e-12);
    differs = differs || train_a[i] != train_b[i];
  }
  EXPECT_TRUE(differs);
}

}  // namespace
}  // namespace mtl
