#include <gtest/gtest.h>

#include "avsbg/gradcheck.hpp"
#include "oracles.hpp"

using namespace avsbg;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(42);
  return r;
}

// Scalar probe: weighted sum with fixed random weights, so every output
// element contributes a distinct gradient.
Var probe(const Var& y) {
  std::mt19937_64 r(y.size());
  return sum(mul(y, Var::constant(oracle::random_tensor(y.shape(), r))));
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t.at(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ArgumentError);
  EXPECT_EQ(t.reshaped({6, 4}).dim(0), 6);
  EXPECT_THROW(t.reshaped({5, 5}), ArgumentError);
}

TEST(Tensor, SliceAndConcatAreInverse) {
  const Tensor t = oracle::random_tensor({5, 2, 3}, rng());
  std::vector<Tensor> parts;
  for (int i = 0; i < 5; ++i) parts.push_back(t.slice0(i, 1));
  EXPECT_EQ(concat0(parts), t);
}

TEST(Autograd, BackwardRequiresScalar) {
  Var x = Var::parameter(Tensor({2}, 1.0));
  EXPECT_THROW(backward(x), ArgumentError);
}

TEST(Autograd, NoGradGuardBuildsNoGraph) {
  Var x = Var::parameter(Tensor({3}, 2.0));
  NoGradGuard g;
  const Var y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var x = Var::parameter(Tensor({1}, 3.0));
  const Var y = add(mul(x, x), x);  // dy/dx = 2x + 1
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(OpGradients, Elementwise) {
  const Tensor x = oracle::random_tensor({3, 4}, rng(), -3, 3);
  const Tensor c = oracle::random_tensor({3, 4}, rng());
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(sigmoid(v)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(silu(v)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(mul(v, Var::constant(c))); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(sub(Var::constant(c), scale(v, 2.5))); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return mean(mul(v, v)); }, x), kGradTol);
}

TEST(OpGradients, Conv2dAllGeometries) {
  struct G {
    int cin, cout, k, stride, pad;
  };
  for (const G g : {G{2, 3, 3, 1, 1}, G{3, 2, 3, 2, 1}, G{3, 4, 4, 4, 0}, G{4, 3, 1, 1, 0}}) {
    const Tensor x = oracle::random_tensor({2, g.cin, 8, 8}, rng());
    const Tensor w = oracle::random_tensor({g.cout, g.cin, g.k, g.k}, rng());
    const Tensor b = oracle::random_tensor({g.cout}, rng());
    EXPECT_LT(max_input_grad_error(
                  [&](const Var& v) { return probe(conv2d(v, Var::constant(w), Var::constant(b), g.stride, g.pad)); }, x),
              kGradTol);
    EXPECT_LT(max_input_grad_error(
                  [&](const Var& v) { return probe(conv2d(Var::constant(x), v, Var::constant(b), g.stride, g.pad)); }, w),
              kGradTol);
    EXPECT_LT(max_input_grad_error(
                  [&](const Var& v) { return probe(conv2d(Var::constant(x), Var::constant(w), v, g.stride, g.pad)); }, b),
              kGradTol);
  }
}

TEST(OpGradients, ResamplingAndPooling) {
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng());
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(resize_bilinear(v, 8, 8)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(resize_bilinear(v, 3, 5)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(avg_pool(v, 2)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(global_avg_pool(v)); }, x), kGradTol);
}

TEST(OpGradients, NormalisationAndBroadcasts) {
  const Tensor x = oracle::random_tensor({2, 3, 2, 2}, rng());
  const Tensor s = oracle::random_tensor({2, 3}, rng());
  const Tensor m = oracle::random_tensor({2, 2, 2}, rng(), 0, 1);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(l2_normalize_channels(v)); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([](const Var& v) { return probe(l2_normalize_channels(v)); }, s), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(channel_scale(v, Var::constant(s))); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(channel_scale(Var::constant(x), v)); }, s), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(spatial_scale(v, Var::constant(m))); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(spatial_scale(Var::constant(x), v)); }, m), kGradTol);
}

TEST(OpGradients, LinearMaps) {
  const Tensor x = oracle::random_tensor({4, 5}, rng());
  const Tensor w = oracle::random_tensor({3, 5}, rng());
  const Tensor b = oracle::random_tensor({3}, rng());
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(linear(v, Var::constant(w), Var::constant(b))); }, x), kGradTol);
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(linear(Var::constant(x), v, Var::constant(b))); }, w), kGradTol);
  const Tensor img = oracle::random_tensor({2, 5, 3, 3}, rng());
  EXPECT_LT(max_input_grad_error([&](const Var& v) { return probe(pointwise(v, Var::constant(w), Var::constant(b))); }, img),
            kGradTol);
}

TEST(OpOracle, Conv2dMatchesLoops) {
  for (int trial = 0; trial < 20; ++trial) {
    const int stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : 1, k = trial % 4 == 0 ? 1 : 3;
    const Tensor x = oracle::random_tensor({2, 3, 7, 6}, rng());
    const Tensor w = oracle::random_tensor({4, 3, k, k}, rng());
    const Tensor b = oracle::random_tensor({4}, rng());
    const Tensor got = conv2d(Var::constant(x), Var::constant(w), Var::constant(b), stride, pad).value();
    const Tensor want = oracle::conv2d(x, w, &b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(oracle::max_rel_err(got, want), 1e-10);
  }
}

TEST(OpOracle, BilinearMatchesPointSampling) {
  const Tensor x = oracle::random_tensor({2, 5, 6}, rng());
  for (auto [oh, ow] : {std::pair{10, 12}, std::pair{3, 4}, std::pair{5, 6}, std::pair{7, 2}}) {
    EXPECT_LT(oracle::max_rel_err(resize_bilinear(x, oh, ow), oracle::resize_bilinear(x, oh, ow)), 1e-12);
  }
  EXPECT_EQ(resize_bilinear(x, 5, 6), x);
}

TEST(OpOracle, AreaAverage) {
  const Tensor x = oracle::random_tensor({3, 8, 8}, rng());
  EXPECT_LT(oracle::max_rel_err(avg_pool(x, 4), oracle::area_average(x, 4)), 1e-12);
  EXPECT_THROW(avg_pool(x, 3), ArgumentError);
}

TEST(OpOracle, NearestKeepsBinaryValues) {
  const Tensor m = oracle::random_mask({2, 7, 5}, rng());
  const Tensor up = resize_nearest(m, 32, 32);
  for (double v : up.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  EXPECT_EQ(resize_nearest(m, 7, 5), m);
}

TEST(OpOracle, L2NormaliseGuardsZeroVectors) {
  const Var z = l2_normalize_channels(Var::constant(Tensor({2, 3}, 0.0)));
  for (double v : z.value().values()) EXPECT_EQ(v, 0.0);
  const Var u = l2_normalize_channels(Var::constant(Tensor({1, 2}, std::vector<double>{3, 4})));
  EXPECT_DOUBLE_EQ(u.value()[0], 0.6);
  EXPECT_DOUBLE_EQ(u.value()[1], 0.8);
}
