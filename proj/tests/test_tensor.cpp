#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lsdan/tensor.hpp"
#include "support/oracles.hpp"

using namespace lsdan;
using lsdan::testing::max_relative_gradient_error;
using lsdan::testing::random_tensor;

namespace {

std::shared_ptr<const SparsePattern> pattern_of(std::initializer_list<std::initializer_list<int>> rows) {
  const std::size_t n = rows.size();
  BitMatrix m(n, rows.begin()->size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::size_t j = 0;
    for (int v : r) m.set(i, j++, v != 0);
    ++i;
  }
  return std::make_shared<const SparsePattern>(m);
}

}  // namespace

TEST(Tensor, MatmulHandExample) {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor::matrix({{5, 6}, {7, 8}});
  const auto c = matmul(a, b);
  EXPECT_EQ(c(0, 0), 19);
  EXPECT_EQ(c(0, 1), 22);
  EXPECT_EQ(c(1, 0), 43);
  EXPECT_EQ(c(1, 1), 50);
}

TEST(Tensor, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros(2, 3), Tensor::zeros(2, 3)), ShapeError);
  EXPECT_THROW(add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), ShapeError);
}

TEST(Tensor, ConstructorRejectsWrongValueCount) { EXPECT_THROW(Tensor(2, 2, {1.0, 2.0, 3.0}), ShapeError); }

TEST(Tensor, SumOfSquaresGradientIsTwiceInput) {
  auto x = Tensor::matrix({{1, -2, 3}}, true);
  sum(hadamard(x, x)).backward();
  EXPECT_EQ(x.grad_at(0, 0), 2.0);
  EXPECT_EQ(x.grad_at(0, 1), -4.0);
  EXPECT_EQ(x.grad_at(0, 2), 6.0);
}

TEST(Tensor, LeavesAccumulateAcrossBackwardCalls) {
  auto x = Tensor::scalar(3.0, true);
  const auto y = scale(x, 2.0);
  y.backward();
  y.backward();
  EXPECT_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardOnNonScalarIsContractError) {
  auto x = Tensor::zeros(2, 2, true);
  EXPECT_THROW(scale(x, 1.0).backward(), ContractError);
}

TEST(Tensor, ConstantsRecordNothing) {
  const auto a = Tensor::matrix({{1, 2}});
  const auto y = add(a, a);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, TapeOrdersProducersBeforeConsumers) {
  auto x = Tensor::matrix({{1, 2}}, true);
  const auto a = scale(x, 2.0);
  const auto b = hadamard(a, x);
  const auto c = sum(add(a, b));
  ComputationTape tape(c);
  EXPECT_LT(tape.position(x), tape.position(a));
  EXPECT_LT(tape.position(a), tape.position(b));
  EXPECT_LT(tape.position(b), tape.position(c));
  EXPECT_EQ(tape.position(c), tape.size() - 1);
  EXPECT_EQ(tape.operations().back(), "sum");
}

TEST(Tensor, SharedSubexpressionGradientCountedOnce) {
  // y = sum((2x) * (2x)) => dy/dx = 8x
  auto x = Tensor::matrix({{1.5, -0.5}}, true);
  const auto a = scale(x, 2.0);
  sum(hadamard(a, a)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
}

TEST(Tensor, ElementwiseHandValues) {
  const auto x = Tensor::matrix({{-2, 0, 3}});
  const auto lr = leaky_relu(x, 0.2);
  EXPECT_DOUBLE_EQ(lr(0, 0), -0.4);
  EXPECT_DOUBLE_EQ(lr(0, 2), 3.0);
  const auto e = elu(x);
  EXPECT_DOUBLE_EQ(e(0, 0), std::exp(-2.0) - 1.0);
  EXPECT_DOUBLE_EQ(e(0, 1), 0.0);
  const auto r = relu(x);
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_EQ(r(0, 2), 3.0);
  EXPECT_DOUBLE_EQ(sigmoid(x)(0, 1), 0.5);
}

TEST(Tensor, LeakyReluRejectsSlopeOutsideUnitInterval) {
  EXPECT_THROW(leaky_relu(Tensor::zeros(1, 1), 0.0), ContractError);
  EXPECT_THROW(leaky_relu(Tensor::zeros(1, 1), 1.0), ContractError);
}

TEST(Tensor, KinkGradientsTakeTheOneSide) {
  auto x = Tensor::matrix({{0.0}}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  x.zero_grad();
  sum(leaky_relu(x, 0.2)).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tensor, SigmoidStaysFiniteAtExtremes) {
  const auto s = sigmoid(Tensor::matrix({{-800, 800}}));
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 1.0);
  EXPECT_TRUE(std::isfinite(stable_sigmoid(-1e308)));
}

TEST(Tensor, MaskedSoftmaxHandExample) {
  BitMatrix m(2, 3);
  m.set(0, 0);
  m.set(0, 2);
  m.set(1, 1);
  const auto s = masked_softmax(Tensor::matrix({{0, 5, std::log(3.0)}, {1, 2, 3}}), m);
  EXPECT_DOUBLE_EQ(s(0, 0), 0.25);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s(0, 2), 0.75);
  EXPECT_EQ(s(1, 1), 1.0);
}

TEST(Tensor, MaskedSoftmaxEmptyRowIsDegenerate) {
  BitMatrix m(2, 2);
  m.set(0, 0);
  try {
    masked_softmax(Tensor::zeros(2, 2), m);
    FAIL() << "expected DegenerateNeighborhoodError";
  } catch (const DegenerateNeighborhoodError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
}

TEST(Tensor, SoftmaxRowsSumToOneAndNoNaNOnLargeInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(4, 6, rng, 50.0, false);
    const auto s = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        ASSERT_TRUE(std::isfinite(s(i, j)));
        total += s(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, SegmentSoftmaxMatchesDenseMaskedSoftmax) {
  std::mt19937_64 rng(11);
  auto pat = pattern_of({{1, 0, 1, 1}, {0, 1, 0, 0}, {1, 1, 1, 1}});
  const auto dense = random_tensor(3, 4, rng, 5.0, false);
  std::vector<double> ev;
  for (std::size_t i = 0; i < 3; ++i)
    for (auto j : pat->row(i)) ev.push_back(dense(i, j));
  const auto seg = segment_softmax(Tensor(ev.size(), 1, ev), pat);
  const auto ref = masked_softmax(dense, pat->to_dense());
  std::size_t p = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (auto j : pat->row(i)) EXPECT_NEAR(seg.values()[p++], ref(i, j), 1e-15);
}

TEST(Tensor, EdgeAggregateHandExample) {
  auto pat = pattern_of({{1, 1}, {0, 1}});
  const auto w = Tensor(3, 1, {0.25, 0.75, 1.0});
  const auto z = Tensor::matrix({{4, 8}, {2, 0}});
  const auto out = edge_aggregate(w, z, pat);
  EXPECT_DOUBLE_EQ(out(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 0.0);
}

TEST(Tensor, DeterministicAcrossRepeatedEvaluation) {
  std::mt19937_64 rng(5);
  auto a = random_tensor(5, 4, rng);
  auto b = random_tensor(4, 3, rng);
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    const auto y = mean(elu(matmul(a, b)));
    y.backward();
    std::vector<double> v(a.grad().begin(), a.grad().end());
    v.push_back(y.item());
    return v;
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Finite-difference properties on small random inputs.

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, ElementwiseAndReductions) {
  std::mt19937_64 rng(100 + GetParam());
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  const std::size_t r = dim(rng), c = dim(rng);
  auto x = random_tensor(r, c, rng, 2.0);
  auto y = random_tensor(r, c, rng, 2.0);
  // Keep inputs away from the kinks at 0, where finite differences straddle two branches.
  for (auto* t : {&x, &y})
    for (auto& v : t->mutable_values())
      if (std::abs(v) < 0.05) v = 0.1;
  auto loss = [&] {
    const auto a = leaky_relu(sub(hadamard(x, y), scale(x, 0.5)), 0.2);
    const auto b = add(elu(y), sigmoid(relu(x)));
    return add(mean(hadamard(a, b)), sum(a));
  };
  EXPECT_LT(max_relative_gradient_error({x, y}, loss), 1e-4);
}

TEST_P(GradientCheck, MatmulTransposeRows) {
  std::mt19937_64 rng(200 + GetParam());
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  const std::size_t n = dim(rng), m = dim(rng), d = dim(rng);
  auto x = random_tensor(n, m, rng);
  auto w = random_tensor(d, m, rng);
  auto v = random_tensor(n, d, rng);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back((i * 7) % n);
  auto loss = [&] {
    const auto z = matmul(x, transpose(w));
    const auto both = concat_rows(z, v);
    const auto col = column(both, both.cols() - 1);
    const auto rd = row_dot(z, v);
    const auto picked = gather_rows(scale_rows(both, add(col, rd)), idx);
    return sum(slice_rows(picked, 0, (n + 1) / 2));
  };
  EXPECT_LT(max_relative_gradient_error({x, w, v}, loss), 1e-4);
}

TEST_P(GradientCheck, SoftmaxVariants) {
  std::mt19937_64 rng(300 + GetParam());
  const std::size_t n = 1 + GetParam() % 6;
  BitMatrix mask(n, n);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    mask.set(i, i);
    for (std::size_t j = 0; j < n; ++j)
      if (coin(rng)) mask.set(i, j);
  }
  auto pat = std::make_shared<const SparsePattern>(mask);
  auto s = random_tensor(n, n, rng, 3.0);
  auto a = random_tensor(n, 1, rng);
  auto b = random_tensor(n, 1, rng);
  auto z = random_tensor(n, 3, rng);
  auto t = random_tensor(n, 3, rng);
  auto loss = [&] {
    const auto dense = masked_softmax(s, mask);
    const auto sparse = segment_softmax(edge_sum(a, b, pat), pat);
    const auto agg = edge_aggregate(sparse, z, pat);
    return add(sum(hadamard(matmul(dense, z), t)), sum(hadamard(softmax_rows(agg), t)));
  };
  EXPECT_LT(max_relative_gradient_error({s, a, b, z, t}, loss), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Random, GradientCheck, ::testing::Range(0, 12));
