// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "drat/gradcheck.hpp"
#include "drat/ops.hpp"
#include "drat/reference.hpp"
#include "drat/tensor_io.hpp"
#include "test_util.hpp"

using namespace drat;
using drat::testutil::max_abs_diff;
using drat::testutil::random_tensor;

TEST(Tensor, RejectsBadShapesAndNonFiniteData) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ContractViolation);
  EXPECT_THROW(Tensor::from({0}, {}), ContractViolation);
  EXPECT_THROW(Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor::from({1}, {std::numeric_limits<double>::infinity()}), NumericError);
}

TEST(Tensor, OpsRejectNonFiniteInputs) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  x.data_mut()[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(ops::tanh(x), NumericError);
}

TEST(Tensor, ShapeMismatchIsContractViolation) {
  Rng rng(1);
  auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  EXPECT_THROW(ops::matmul(a, b), ContractViolation);
  EXPECT_THROW(ops::add(a, random_tensor({3, 2}, rng)), ContractViolation);
}

TEST(Tensor, NoGradGuardSkipsHistory) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  auto y = ops::scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto x = random_tensor({7, 13}, rng, false, -20, 20);
  auto p = ops::softmax(x);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 13; ++j) s += p.at({i, j});
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, SoftmaxIsShiftInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 6}, rng, false, -5, 5);
    const double c = rng.uniform(-100, 100);
    auto shifted = Tensor::from(x.shape(), [&] {
      std::vector<double> v(x.data().begin(), x.data().end());
      for (auto& e : v) e += c;
      return v;
    }());
    EXPECT_LT(max_abs_diff(ops::softmax(x), ops::softmax(shifted)), 1e-12);
  }
}

TEST(Ops, GeluDerivativeAtZeroIsHalf) {
  auto x = Tensor::from({1}, {0.0}, true);
  ops::sum(ops::gelu(x)).backward();
  EXPECT_NEAR(x.grad()[0], 0.5, 1e-15);
}

TEST(Ops, LayerNormNormalizesEachSlice) {
  Rng rng(5);
  auto x = random_tensor({5, 16}, rng, false, -3, 7);
  auto y = ops::layer_norm(x);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at({i, j});
    mean /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at({i, j}) - mean) * (y.at({i, j}) - mean);
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
}

TEST(Ops, LayerNormMatchesOracle) {
  Rng rng(6);
  auto x = random_tensor({4, 8}, rng), g = random_tensor({8}, rng), b = random_tensor({8}, rng);
  auto got = ops::layer_norm(x, g, b);
  auto want = ref::layer_norm(ref::from_tensor(x), {g.data().begin(), g.data().end()},
                              {b.data().begin(), b.data().end()});
  EXPECT_LT(ref::max_abs_diff(ref::from_tensor(got), want), 1e-12);
}

TEST(Ops, ConcatSliceRoundTrip) {
  Rng rng(7);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    std::vector<Tensor> parts{a, b};
    auto c = ops::concat(parts, axis);
    EXPECT_EQ(c.dim(axis), 2 * a.dim(axis));
    EXPECT_EQ(max_abs_diff(ops::slice(c, axis, 0, c.dim(axis) / 2), a), 0.0);
    EXPECT_EQ(max_abs_diff(ops::slice(c, axis, c.dim(axis) / 2, c.dim(axis)), b), 0.0);
  }
}

TEST(Ops, MatmulMatchesOracle) {
  Rng rng(8);
  auto a = random_tensor({9, 17}, rng), b = random_tensor({17, 5}, rng);
  EXPECT_LT(ref::max_abs_diff(ref::from_tensor(ops::matmul(a, b)), ref::matmul(ref::from_tensor(a), ref::from_tensor(b))),
            1e-13);
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogK) {
  auto logits = Tensor::zeros({2, 4});
  std::vector<int> labels{0, 3};
  EXPECT_NEAR(ops::cross_entropy(logits, labels).item(), std::log(4.0), 1e-14);
  EXPECT_THROW(ops::cross_entropy(logits, std::vector<int>{0, 4}), ContractViolation);
}

TEST(Conv3d, SingleWindowEqualsProductSum) {
  Rng rng(9);
  auto in = random_tensor({1, 3, 3, 3}, rng), k = random_tensor({1, 1, 3, 3, 3}, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < 27; ++i) want += in.data()[i] * k.data()[i];
  auto out = ops::conv3d(in, k, 1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out.data()[0], want, 1e-14);
}

TEST(Conv3d, DeltaKernelCropsCentre) {
  Rng rng(10);
  auto in = random_tensor({1, 5, 6, 7}, rng);
  std::vector<double> kv(27, 0.0);
  kv[13] = 1.0;
  auto out = ops::conv3d(in, Tensor::from({1, 1, 3, 3, 3}, kv), 1);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 4, 5}));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(out.at({0, t, y, x}), in.at({0, t + 1, y + 1, x + 1}));
}

TEST(Conv3d, OutputExtents) {
  EXPECT_EQ(ops::conv_out_extent(12, 7, 7), 1u);
  EXPECT_EQ(ops::conv_out_extent(12, 2, 2), 6u);
  EXPECT_THROW(ops::conv_out_extent(1, 2, 1), ContractViolation);
}

TEST(Attention, SingleTokenReturnsItsValue) {
  Rng rng(11);
  auto q = random_tensor({1, 8}, rng), k = random_tensor({1, 8}, rng), v = random_tensor({1, 8}, rng);
  EXPECT_EQ(max_abs_diff(ops::attention(q, k, v, 2), v), 0.0);
}

TEST(Attention, SaturatedQuerySelectsMatchingKey) {
  // Orthogonal one-hot keys, query aligned with key 2 at a large scale.
  const std::size_t n = 4, d = 4;
  std::vector<double> kv(n * d, 0.0), qv(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) kv[i * d + i] = 1.0;
  qv[2] = 200.0;
  Rng rng(12);
  auto v = random_tensor({n, d}, rng);
  auto out = ops::attention(Tensor::from({1, d}, qv), Tensor::from({n, d}, kv), v, 1);
  for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out.data()[c], v.at({2, c}), 1e-12);
}

TEST(Attention, KeyPermutationInvariance) {
  Rng rng(13);
  auto q = random_tensor({5, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto a = ops::attention(q, k, v, 2);
  auto b = ops::attention(q, ops::gather_rows(k, perm), ops::gather_rows(v, perm), 2);
  EXPECT_LT(max_abs_diff(a, b), 1e-14);
}

TEST(Attention, MatchesOracleAndCounts) {
  Rng rng(14);
  auto q = random_tensor({5, 12}, rng), k = random_tensor({7, 12}, rng), v = random_tensor({7, 12}, rng);
  OpCounter counter;
  Tensor got;
  {
    CountingScope scope(counter);
    got = ops::attention(q, k, v, 3);
  }
  EXPECT_EQ(counter.dot_products, 35u);
  EXPECT_LT(max_abs_diff(got, full_attention_oracle(q, k, v, 3)), 1e-14);
}

TEST(Attention, ScalingFaultChangesOutput) {
  Rng rng(15);
  auto q = random_tensor({3, 8}, rng), k = random_tensor({4, 8}, rng), v = random_tensor({4, 8}, rng);
  auto good = ops::attention(q, k, v, 2);
  ops::fault::SkipAttentionScaling fault;
  EXPECT_GT(max_abs_diff(good, ops::attention(q, k, v, 2)), 1e-6);
}

TEST(ScatterMean, AveragesOverlaps) {
  auto src = Tensor::from({3, 1}, {1.0, 3.0, 10.0});
  std::vector<std::size_t> targets{0, 0, 1};
  auto out = ops::scatter_mean_rows(src, targets, 2);
  EXPECT_EQ(out.data()[0], 2.0);
  EXPECT_EQ(out.data()[1], 10.0);
  EXPECT_THROW(ops::scatter_mean_rows(src, targets, 3), ContractViolation);
}

TEST(Gradcheck, ConstantFunctionHasZeroGradient) {
  Rng rng(16);
  auto x = random_tensor({3, 5}, rng, true);
  auto f = [](const Tensor& t) { return ops::sum(ops::softmax(t)); };
  ops::sum(f(x)).backward();
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-8);
}

TEST(Gradcheck, Matmul) {
  Rng rng(17);
  auto w = random_tensor({5, 3}, rng);
  auto x = random_tensor({4, 5}, rng, true);
  EXPECT_LT(gradcheck([&](const Tensor& t) { return ops::sum(ops::matmul(t, w)); }, x), 1e-6);
}

TEST(Gradcheck, PrimitivesPass) {
  Rng rng(18);
  auto x = random_tensor({3, 8}, rng, true);
  auto g = random_tensor({8}, rng, true), b = random_tensor({8}, rng, true);
  auto w = random_tensor({3, 8}, rng);
  auto weighted = [&](const Tensor& t) { return ops::sum(ops::mul(t, w)); };
  EXPECT_LT(gradcheck([&](const Tensor& t) { return weighted(ops::gelu(t)); }, x), 1e-5);
  EXPECT_LT(gradcheck([&](const Tensor& t) { return weighted(ops::tanh(t)); }, x), 1e-5);
  EXPECT_LT(gradcheck([&](const Tensor& t) { return weighted(ops::softmax(t)); }, x), 1e-5);
  std::vector<Tensor> leaves{x, g, b};
  EXPECT_LT(gradcheck([&] { return weighted(ops::layer_norm(x, g, b)); }, leaves).max_relative_error, 1e-5);
  auto kk = random_tensor({4, 8}, rng, true), vv = random_tensor({4, 8}, rng, true);
  std::vector<Tensor> attn_leaves{x, kk, vv};
  EXPECT_LT(gradcheck([&] { return weighted(ops::attention(x, kk, vv, 2)); }, attn_leaves).max_relative_error, 1e-5);
  auto in = random_tensor({2, 3, 4, 4}, rng, true), ker = random_tensor({3, 2, 2, 2, 2}, rng, true);
  std::vector<Tensor> conv_leaves{in, ker};
  EXPECT_LT(gradcheck([&] { return ops::sum(ops::tanh(ops::conv3d(in, ker, 1))); }, conv_leaves).max_relative_error,
            1e-5);
}

TEST(Gradcheck, RejectsStepOutsideRange) {
  auto x = Tensor::from({1}, {1.0}, true);
  EXPECT_THROW(gradcheck([](const Tensor& t) { return ops::sum(t); }, x, 1e-2), ContractViolation);
}

TEST(TensorIo, RoundTripF64IsExact) {
  Rng rng(19);
  auto t = random_tensor({2, 3, 4}, rng);
  auto back = decode_tensor(encode_tensor(t));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(max_abs_diff(back, t), 0.0);
}

TEST(TensorIo, RoundTripF32AndFiles) {
  Rng rng(20);
  auto t = random_tensor({5, 2}, rng);
  const auto path = std::filesystem::temp_directory_path() / "drat_io_test.tnsr";
  save_tensor(path, t, DType::F32);
  auto back = load_tensor(path);
  std::filesystem::remove(path);
  EXPECT_LT(max_abs_diff(back, t), 1e-7);
}

TEST(TensorIo, RejectsCorruptInput) {
  auto bytes = encode_tensor(Tensor::from({2}, {1.0, 2.0}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor(bad_magic), IoError);
  bytes.pop_back();
  EXPECT_THROW(decode_tensor(bytes), IoError);
  EXPECT_THROW(load_tensor("/nonexistent/none.tnsr"), IoError);
}
