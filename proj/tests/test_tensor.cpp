#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stiln/loss.hpp"
#include "stiln/ops.hpp"
#include "stiln/optim.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace stiln;
using stiln::testing::random_tensor;

using F = Tensor<float>;

TEST(TensorCore, ShapeAndDataStayConsistent) {
  F t(Shape{2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(F(Shape{2, 0}), InvalidShape);
  EXPECT_THROW(F(Shape{2, 2}, std::vector<float>(3)), InvalidShape);
  EXPECT_THROW(reshape(t, Shape{5, 5}), InvalidShape);
}

TEST(TensorCore, GradBufferMatchesDataShapeAfterBackward) {
  std::mt19937_64 rng(1);
  auto x = random_tensor<float>({3, 4}, rng);
  x.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F loss = sum(relu(x));
  backward(loss);
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().size(), x.data().size());
}

TEST(TensorCore, LeafLossHasUnitGradient) {
  F x = F::scalar(4.0f);
  x.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  backward(x);
  EXPECT_EQ(x.grad()[0], 1.0f);
}

TEST(TensorCore, UnusedParameterGetsZeroGradient) {
  std::mt19937_64 rng(2);
  auto used = random_tensor<float>({4}, rng);
  auto unused = random_tensor<float>({4}, rng);
  used.set_requires_grad().zero_grad();
  unused.set_requires_grad().zero_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F loss = sum(mul(used, used));
  backward(loss);
  for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(TensorCore, SumReluMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto r = stiln::testing::gradcheck<double>(
      {stiln::testing::off_zero_tensor<double>({5, 4}, rng, 0.1), stiln::testing::off_zero_tensor<double>({4}, rng, 0.1)},
      [](std::vector<Tensor<double>>& in) { return sum(relu(matmul(in[0], reshape(in[1], Shape{4, 1})))); });
  EXPECT_LT(r.max_rel, 1e-3);
}

TEST(TensorCore, ReusedInputAccumulatesGradient) {
  F x(Shape{1}, {3.0f});
  x.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F loss = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  backward(loss);
  EXPECT_FLOAT_EQ(x.grad()[0], 7.0f);
}

TEST(TensorCore, SecondBackwardIsAnError) {
  F x(Shape{2}, {1.0f, 2.0f});
  x.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), ContractViolation);
  EXPECT_THROW(sum(x), ContractViolation);  // recording after backward
}

TEST(TensorCore, NonScalarLossIsRejected) {
  F x(Shape{2}, {1.0f, 2.0f});
  x.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F y = relu(x);
  EXPECT_THROW(backward(y), ContractViolation);
}

TEST(TensorCore, BackwardWithoutTapeIsRejected) {
  F x = F::scalar(1.0f);
  EXPECT_THROW(backward(x), ContractViolation);
}

TEST(TensorCore, TapeIsTopologicallyOrdered) {
  std::mt19937_64 rng(4);
  auto x = random_tensor<float>({2, 3}, rng);
  auto w = random_tensor<float>({3, 2}, rng);
  x.set_requires_grad();
  w.set_requires_grad();
  Tape<float> tape;
  TapeScope<float> scope(tape);
  F loss = sum(sigmoid(add(matmul(x, w), matmul(x, w))));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (const auto& in : tape.node(i).inputs) {
      if (!in || in->tape_id == 0) continue;  // leaf
      bool earlier = false;
      for (std::size_t j = 0; j < i; ++j) earlier |= tape.node(j).output == in;
      EXPECT_TRUE(earlier) << "node " << i;
    }
  }
}

TEST(TensorCore, OperationsAreDeterministic) {
  std::mt19937_64 a(9), b(9);
  const auto xa = random_tensor<float>({4, 6, 6, 3}, a), ka = random_tensor<float>({3, 3, 3, 5}, a);
  const auto xb = random_tensor<float>({4, 6, 6, 3}, b), kb = random_tensor<float>({3, 3, 3, 5}, b);
  const F ya = pool2d(conv2d(xa, ka, F(), 1, 1), 2, PoolMode::max);
  const F yb = pool2d(conv2d(xb, kb, F(), 1, 1), 2, PoolMode::max);
  EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
}

// --- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  F p(Shape{3}, {1.0f, -2.0f, 0.5f});
  p.set_requires_grad().zero_grad();
  const auto before = std::vector<float>(p.data().begin(), p.data().end());
  AdamState<float> st;
  std::vector<F> params{p};
  adam_step<float>(st, params);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p.data().begin()));
}

TEST(Adam, StepCounterIncrementsByOne) {
  F p(Shape{1}, {1.0f});
  p.set_requires_grad().zero_grad();
  AdamState<float> st;
  std::vector<F> params{p};
  for (int i = 1; i <= 3; ++i) {
    adam_step<float>(st, params);
    EXPECT_EQ(st.t, i);
  }
}

TEST(Adam, MissingGradientIsAContractViolation) {
  F p(Shape{1}, {1.0f});
  AdamState<float> st;
  std::vector<F> params{p};
  EXPECT_THROW(adam_step<float>(st, params), ContractViolation);
}

TEST(Adam, DefaultsMatchDocumentedValues) {
  AdamState<float> st;
  EXPECT_EQ(st.lr, 0.0005);
  EXPECT_EQ(st.beta1, 0.9);
  EXPECT_EQ(st.beta2, 0.999);
  EXPECT_EQ(st.epsilon, 1e-8);
}

TEST(Adam, QuadraticTracksScalarOracleStepForStep) {
  Tensor<double> x(Shape{1}, {0.0});
  x.set_requires_grad();
  AdamState<double> st;
  st.lr = 0.05;
  oracle::ScalarAdam ref{0.05};
  double xr = 0.0;
  for (int step = 0; step < 500; ++step) {
    x.zero_grad();
    {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      Tensor<double> d = sub(x, Tensor<double>(Shape{1}, {3.0}));
      Tensor<double> loss = sum(mul(d, d));
      backward(loss);
    }
    std::vector<Tensor<double>> params{x};
    adam_step<double>(st, params);
    xr = ref.step(xr, 2.0 * (xr - 3.0));
    ASSERT_NEAR(x[0], xr, 1e-6) << "step " << step;
  }
  EXPECT_LT(std::abs(x[0] - 3.0), 0.05);
}

// --- BCE -------------------------------------------------------------------

TEST(Bce, SymmetricCaseIsLog2) {
  const F p(Shape{1, 2}, {0.5f, 0.5f}), y(Shape{1, 2}, {1.0f, 0.0f});
  EXPECT_NEAR(bce_loss(p, y).item(), std::log(2.0), 1e-6);
}

TEST(Bce, PerfectPredictionIsNearZero) {
  const F p(Shape{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  EXPECT_LT(bce_loss(p, p).item(), 1e-6);
}

TEST(Bce, RandomBatchMatchesDirectSum) {
  std::mt19937_64 rng(5);
  const auto p = random_tensor<double>({8, 2}, rng, 0.01, 0.99);
  Tensor<double> y(Shape{8, 2});
  for (int i = 0; i < 8; ++i) y[static_cast<std::size_t>(2 * i + (i % 3 == 0))] = 1.0;
  EXPECT_NEAR(bce_loss(p, y).item(), oracle::bce(oracle::to_vec(p.data()), oracle::to_vec(y.data())), 1e-6);
}

TEST(Bce, ShapeMismatchIsRejected) {
  EXPECT_THROW(bce_loss(F(Shape{2, 2}), F(Shape{1, 2})), InvalidShape);
}
