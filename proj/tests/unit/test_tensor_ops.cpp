#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"
#include "test_support.hpp"

using namespace ctcnat;
using ctcnat::testing::gradient_check;
using ctcnat::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-6;

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({0, 3}), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Tensor, CloneIsDeepDetachDropsGrad) {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = a.clone();
  b.mutable_data()[0] = 9.0;
  EXPECT_EQ(a.at(0, 0), 1.0);
  a.set_requires_grad(true);
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Ops, MatmulValues) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.at(0, 0), 19.0);
  EXPECT_EQ(c.at(0, 1), 22.0);
  EXPECT_EQ(c.at(1, 0), 43.0);
  EXPECT_EQ(c.at(1, 1), 50.0);
  const Tensor d = matmul_nt(a, b);
  EXPECT_EQ(d.at(0, 1), 1 * 7 + 2 * 8);
}

TEST(Ops, LogSumExp) {
  const std::vector<double> xs{std::log(1.0), std::log(2.0), std::log(3.0)};
  EXPECT_NEAR(log_sum_exp(xs), std::log(6.0), 1e-15);
  EXPECT_EQ(log_sum_exp(std::span<const double>{}), kLogZero);
  EXPECT_EQ(log_add(kLogZero, kLogZero), kLogZero);
  EXPECT_NEAR(log_add(1000.0, 1000.0), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Ops, SoftmaxRowsNormalized) {
  std::mt19937_64 rng(3);
  const Tensor x = random_matrix(4, 5, rng, 3.0);
  const Tensor ls = log_softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    std::vector<double> row(ls.data().begin() + static_cast<long>(r * 5), ls.data().begin() + static_cast<long>(r * 5 + 5));
    EXPECT_NEAR(log_sum_exp(row), 0.0, 1e-12);
  }
  const Tensor s = softmax(x, 0);
  for (std::size_t c = 0; c < 5; ++c) {
    double total = 0.0;
    for (std::size_t r = 0; r < 4; ++r) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, MaskFutureZeroesWeights) {
  const Tensor w = softmax(mask_future(Tensor::full({3, 3}, 0.5)), 1);
  EXPECT_EQ(w.at(0, 1), 0.0);
  EXPECT_EQ(w.at(0, 2), 0.0);
  EXPECT_EQ(w.at(1, 2), 0.0);
  EXPECT_NEAR(w.at(2, 0), 1.0 / 3.0, 1e-15);
}

TEST(Ops, NonFiniteResultThrows) {
  EXPECT_THROW(scale(Tensor::full({2}, 1e300), 1e300), NumericError);
}

TEST(Ops, NoGradGuardRecordsNothing) {
  GradTape tape;
  TapeScope scope(tape);
  Tensor a = Tensor::full({2, 2}, 1.0, true);
  {
    NoGradGuard guard;
    (void)matmul(a, a);
  }
  EXPECT_EQ(tape.num_records(), 0u);
  (void)matmul(a, a);
  EXPECT_EQ(tape.num_records(), 1u);
}

TEST(OpsGradient, MatmulAndFriends) {
  std::mt19937_64 rng(11);
  const auto r1 = gradient_check([](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); },
                                 {random_matrix(3, 4, rng), random_matrix(4, 2, rng)});
  EXPECT_LT(r1.max_rel_error, kGradTol);
  const auto r2 = gradient_check(
      [](const std::vector<Tensor>& in) { return sum(mul(matmul_nt(in[0], in[1]), matmul_nt(in[0], in[1]))); },
      {random_matrix(3, 4, rng), random_matrix(2, 4, rng)});
  EXPECT_LT(r2.max_rel_error, kGradTol);
  const auto r3 = gradient_check(
      [](const std::vector<Tensor>& in) { return sum(mul(transpose(in[0]), transpose(in[0]))); },
      {random_matrix(3, 2, rng)});
  EXPECT_LT(r3.max_rel_error, kGradTol);
}

TEST(OpsGradient, ElementwiseAndBias) {
  std::mt19937_64 rng(12);
  const auto r = gradient_check(
      [](const std::vector<Tensor>& in) {
        Tensor h = add_row_bias(in[0], in[1]);
        h = relu(add(h, scale(in[0], 0.3)));
        return mean(mul(h, h));
      },
      {random_matrix(4, 3, rng), Tensor::vector({0.1, -0.2, 0.3})});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(OpsGradient, SoftmaxBothAxes) {
  std::mt19937_64 rng(13);
  const Tensor weights = random_matrix(3, 4, rng);
  for (std::size_t axis : {0u, 1u}) {
    const auto r = gradient_check(
        [&weights, axis](const std::vector<Tensor>& in) { return sum(mul(softmax(in[0], axis), weights)); },
        {random_matrix(3, 4, rng)});
    EXPECT_LT(r.max_rel_error, kGradTol) << "axis " << axis;
  }
  const auto r = gradient_check(
      [&weights](const std::vector<Tensor>& in) { return sum(mul(log_softmax(in[0]), weights)); },
      {random_matrix(3, 4, rng)});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(OpsGradient, LayerNorm) {
  std::mt19937_64 rng(14);
  const Tensor weights = random_matrix(3, 5, rng);
  const auto r = gradient_check(
      [&weights](const std::vector<Tensor>& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), weights)); },
      {random_matrix(3, 5, rng), Tensor::vector({1.0, 0.9, 1.1, 1.2, 0.8}), Tensor::vector({0, 0.1, 0, -0.1, 0.2})});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(OpsGradient, MaskedAttentionScores) {
  std::mt19937_64 rng(15);
  const Tensor weights = random_matrix(4, 4, rng);
  const auto r = gradient_check(
      [&weights](const std::vector<Tensor>& in) { return sum(mul(softmax(mask_future(in[0]), 1), weights)); },
      {random_matrix(4, 4, rng)});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(OpsGradient, IndexingAndShapes) {
  std::mt19937_64 rng(16);
  const std::vector<int> ids{2, 0, 2, 1};
  const Tensor weights = random_matrix(4, 6, rng);
  const auto r = gradient_check(
      [&](const std::vector<Tensor>& in) {
        const Tensor e = embedding(in[0], ids);                           // 4×3
        const Tensor wide = concat_cols({e, slice_cols(e, 1, 2), slice_cols(e, 0, 1)});  // 4×6
        const Tensor tall = concat_rows({slice_rows(wide, 2, 2), slice_rows(wide, 0, 2)});
        return sum(mul(reshape(reshape(tall, {24}), {4, 6}), weights));
      },
      {random_matrix(3, 3, rng)});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(OpsGradient, NllLoss) {
  std::mt19937_64 rng(17);
  const std::vector<int> targets{1, 0, 3};
  const auto r = gradient_check(
      [&](const std::vector<Tensor>& in) { return nll_loss(log_softmax(in[0]), targets); },
      {random_matrix(3, 4, rng)});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(OpsGradient, DropoutWithFixedMask) {
  std::mt19937_64 rng(18);
  const Tensor x = random_matrix(5, 4, rng);
  const auto r = gradient_check(
      [](const std::vector<Tensor>& in) {
        std::mt19937_64 mask_rng(99);  // same mask on every evaluation
        return sum(mul(dropout(in[0], 0.3, mask_rng), in[0]));
      },
      {x});
  EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(Ops, DropoutScalesKeptUnits) {
  std::mt19937_64 rng(5);
  const Tensor y = dropout(Tensor::full({1000}, 1.0), 0.25, rng);
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.75, 1e-15);
      ++kept;
    }
  }
  EXPECT_GT(kept, 650u);
  EXPECT_LT(kept, 850u);
}

TEST(Tape, GradientAccumulatesAcrossUses) {
  Tensor a = Tensor::vector({2.0, 3.0});
  a.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    const Tensor loss = sum(add(mul(a, a), a));
    tape.backward(loss);
  }
  const auto g = tape.gradient(a);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0], 5.0);
  EXPECT_EQ(g[1], 7.0);
  tape.accumulate_into_leaves();
  EXPECT_EQ(a.grad()[1], 7.0);
}
