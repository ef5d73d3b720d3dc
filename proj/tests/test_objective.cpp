#include <gtest/gtest.h>

#include <numbers>

#include "avsbg/gradcheck.hpp"
#include "avsbg/objective.hpp"
#include "oracles.hpp"

using namespace avsbg;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(41);
  return r;
}

Tensor sigmoid_of(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

FusedPyramid levels_for(int t, int h, int c) {
  FusedPyramid f;
  for (std::size_t i = 0; i < 4; ++i) {
    const int s = h >> (i + 2);
    f.z[i] = Var::constant(oracle::random_tensor({t, c, s, s}, rng()));
  }
  return f;
}

}  // namespace

TEST(Bce, MatchesOracle) {
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 2 + trial % 4;
    const Tensor logits = oracle::random_tensor({t, 4, 6}, rng(), -4, 4);
    const Tensor y = oracle::random_mask({t, 4, 6}, rng());
    std::vector<bool> sup(static_cast<std::size_t>(t));
    for (auto&& s : sup) s = rng()() % 2;
    sup[0] = true;
    const double want = oracle::bce(sigmoid_of(logits), y, sup);
    EXPECT_LT(oracle::rel_err(bce_with_logits(Var::constant(logits), y, sup).value()[0], want), 1e-6);
    EXPECT_LT(oracle::rel_err(bce_loss(sigmoid_of(logits), y, sup), want), 1e-6);
  }
}

TEST(Bce, HalfProbabilityIsLnTwo) {
  const Tensor y = oracle::random_mask({3, 8, 8}, rng());
  EXPECT_NEAR(bce_with_logits(Var::constant(Tensor({3, 8, 8})), y, {true, true, true}).value()[0], std::numbers::ln2, 1e-12);
  EXPECT_NEAR(bce_loss(Tensor({3, 8, 8}, 0.5), y, {true, false, true}), std::numbers::ln2, 1e-12);
}

TEST(Bce, PerfectPredictionIsNearZero) {
  const Tensor y = oracle::random_mask({2, 8, 8}, rng());
  Tensor logits = y;
  for (double& v : logits.values()) v = v > 0.5 ? 40.0 : -40.0;
  EXPECT_LE(bce_with_logits(Var::constant(logits), y, {true, true}).value()[0], 1e-5);
  EXPECT_LE(bce_loss(y, y, {true, true}), 1e-5);
}

TEST(Bce, UnsupervisedFramesAreIgnored) {
  const Tensor y = oracle::random_mask({2, 4, 4}, rng());
  Tensor logits = oracle::random_tensor({2, 4, 4}, rng());
  const double before = bce_with_logits(Var::constant(logits), y, {true, false}).value()[0];
  for (int r = 0; r < 4; ++r) logits.at(1, r, 0) = 1e3;
  EXPECT_EQ(bce_with_logits(Var::constant(logits), y, {true, false}).value()[0], before);
  EXPECT_THROW(bce_with_logits(Var::constant(logits), y, {false, false}), ArgumentError);
}

TEST(Bce, Gradient) {
  const Tensor y = oracle::random_mask({2, 3, 3}, rng());
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return bce_with_logits(v, y, {true, false}); },
                                 oracle::random_tensor({2, 3, 3}, rng(), -3, 3)),
            1e-6);
}

TEST(KlSoftmax, MatchesOracleAndIsNonNegative) {
  for (int trial = 0; trial < 100; ++trial) {
    const int rows = 1 + trial % 5, c = 2 + trial % 9;
    const Tensor p = oracle::random_tensor({rows, c}, rng(), -3, 3), q = oracle::random_tensor({rows, c}, rng(), -3, 3);
    const double got = kl_softmax(Var::constant(p), Var::constant(q)).value()[0];
    EXPECT_LT(oracle::rel_err(got, oracle::kl_rows(p, q)), 1e-6);
    EXPECT_GE(got, 0.0);
  }
}

TEST(KlSoftmax, ShiftedLogitsGiveZero) {
  const Tensor p = oracle::random_tensor({3, 8}, rng());
  Tensor q = p;
  for (double& v : q.values()) v += 2.5;
  EXPECT_NEAR(kl_softmax(Var::constant(p), Var::constant(q)).value()[0], 0.0, 1e-14);
}

TEST(KlAlignment, MatchesOracleTimesLambda) {
  for (int trial = 0; trial < 10; ++trial) {
    const int t = 2 + trial % 3, c = 3 + trial % 4;
    const FusedPyramid f = levels_for(t, 32, c);
    const Tensor probs = oracle::random_tensor({t, 32, 32}, rng(), 0, 1);
    const Tensor audio = oracle::random_tensor({t, c}, rng());
    std::vector<Tensor> lv;
    for (const auto& z : f.z) lv.push_back(z.value());
    const double got = kl_alignment(Var::constant(probs), f, Var::constant(audio), 0.5).value()[0];
    EXPECT_LT(oracle::rel_err(got, 0.5 * oracle::kl_alignment(probs, lv, audio)), 1e-6);
  }
}

TEST(KlAlignment, ZeroLambdaIsExactlyZero) {
  const FusedPyramid f = levels_for(2, 32, 4);
  const Var kl = kl_alignment(Var::constant(Tensor({2, 32, 32}, 0.7)), f, Var::constant(oracle::random_tensor({2, 4}, rng())), 0.0);
  EXPECT_EQ(kl.value()[0], 0.0);
  EXPECT_THROW(kl_alignment(Var::constant(Tensor({2, 32, 32})), f, Var::constant(Tensor({2, 4})), -1.0), ArgumentError);
}

TEST(Consistency, IdentitiesAndScaleInvariance) {
  const Tensor a = oracle::random_tensor({5, 128}, rng());
  Tensor scaled = a;
  scaled *= 3.7;
  EXPECT_EQ(consistency_loss(Var::constant(a), Var::constant(a), 1.0).value()[0], 0.0);
  EXPECT_NEAR(consistency_loss(Var::constant(a), Var::constant(scaled), 1.0).value()[0], 0.0, 1e-15);
  const Tensor b = oracle::random_tensor({5, 128}, rng());
  const double raw = consistency_loss(Var::constant(a), Var::constant(b), 1.0).value()[0];
  EXPECT_GT(raw, 0.0);
  EXPECT_NEAR(consistency_loss(Var::constant(a), Var::constant(b), 2.5).value()[0], 2.5 * raw, 1e-15);
}

TEST(Consistency, OrthogonalRows) {
  Tensor a({2, 128}), b({2, 128});
  a.at(0, 0) = a.at(1, 1) = 1.0;
  b.at(0, 2) = b.at(1, 3) = 5.0;
  // each row differs by two unit entries: 2 / 128
  EXPECT_DOUBLE_EQ(consistency_loss(Var::constant(a), Var::constant(b), 1.0).value()[0], 0.015625);
  EXPECT_THROW(consistency_loss(Var::constant(a), Var::constant(Tensor({2, 64})), 1.0), ArgumentError);
}

TEST(TotalLoss, Identities) {
  const auto b = total_loss(0.4, 0.2, 0.1, 0.5, 2.0);
  EXPECT_DOUBLE_EQ(b.total, 0.4 + 0.5 * 0.2 + 2.0 * 0.1);
  EXPECT_DOUBLE_EQ(b.consistency, 0.2);
  EXPECT_EQ(total_loss(0.4, 0.2, 0.1, 0.0, 0.0).total, 0.4);
  EXPECT_EQ(total_loss(0.4, 0.0, 0.0, 0.5, 1.0).total, 0.4);
  for (int i = 0; i < 50; ++i) {
    std::uniform_real_distribution<double> u(0, 2);
    const auto r = total_loss(u(rng()), u(rng()), u(rng()), u(rng()), u(rng()));
    EXPECT_GE(r.total, r.bce);
    EXPECT_GE(r.total, 0.0);
  }
}
