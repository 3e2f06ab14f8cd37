#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "mmprompt/errors.hpp"
#include "test_support.hpp"

namespace mmprompt {
namespace {

using testing::gradcheck;
using testing::weighted_sum;

constexpr double kTol = 1e-4;

using OpFn = std::function<Var(Tape&, std::vector<Var>&)>;

void expect_grad(const OpFn& f, const std::vector<Matrix>& inputs, std::uint64_t seed = 7) {
  const auto r = gradcheck(f, inputs, 20, seed);
  EXPECT_GE(r.directions, 20);
  EXPECT_LT(r.max_rel_error, kTol);
}

class OpGrad : public ::testing::Test {
 protected:
  Rng rng_{2024};
  Matrix m(Index r, Index c, double s = 1.0) { return rng_.normal_matrix(r, c, s); }
};

TEST_F(OpGrad, Matmul) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(matmul(x[0], x[1])); }, {m(3, 4), m(4, 5)});
}

TEST_F(OpGrad, Transpose) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(transpose(x[0])); }, {m(3, 4)});
}

TEST_F(OpGrad, AddSubMul) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(add(x[0], x[1])); }, {m(2, 3), m(2, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(sub(x[0], x[1])); }, {m(2, 3), m(2, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(mul(x[0], x[1])); }, {m(2, 3), m(2, 3)});
}

TEST_F(OpGrad, ScaleAndShift) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(scale(x[0], -1.7)); }, {m(3, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(add_scalar(x[0], 0.3)); }, {m(3, 3)});
}

TEST_F(OpGrad, RowBroadcasts) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(add_row(x[0], x[1])); }, {m(4, 3), m(1, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(mul_row(x[0], x[1])); }, {m(4, 3), m(1, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(broadcast_rows(x[0], 5)); }, {m(1, 3)});
}

TEST_F(OpGrad, Activations) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(gelu(x[0])); }, {m(4, 5, 2.0)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(tanh(x[0])); }, {m(4, 5)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(sigmoid(x[0])); }, {m(4, 5)});
}

TEST_F(OpGrad, Softmax) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(softmax_rows(x[0])); }, {m(3, 6)});
}

TEST_F(OpGrad, MaskedSoftmax) {
  Mask visible(3, 5);
  for (Index r = 0; r < 3; ++r) {
    for (Index c = 0; c < 5; ++c) visible(r, c) = c < 2 || c - 2 <= r;
  }
  expect_grad([&](Tape&, std::vector<Var>& x) { return weighted_sum(masked_softmax_rows(x[0], visible)); },
              {m(3, 5)});
}

TEST_F(OpGrad, LayerNorm) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(layernorm(x[0], x[1], x[2])); },
              {m(4, 8, 2.0), m(1, 8), m(1, 8)});
}

TEST_F(OpGrad, SlicesAndConcats) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(slice_rows(x[0], 1, 2)); }, {m(4, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(slice_cols(x[0], 1, 2)); }, {m(4, 3)});
  expect_grad(
      [](Tape&, std::vector<Var>& x) {
        const Var parts[] = {x[0], x[1]};
        return weighted_sum(concat_rows(parts));
      },
      {m(2, 3), m(4, 3)});
  expect_grad(
      [](Tape&, std::vector<Var>& x) {
        const Var parts[] = {x[0], x[1], x[0]};
        return weighted_sum(concat_cols(parts));
      },
      {m(2, 3), m(2, 1)});
}

TEST_F(OpGrad, Reductions) {
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(mean_rows(x[0])); }, {m(5, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return sum(x[0]); }, {m(5, 3)});
  expect_grad([](Tape&, std::vector<Var>& x) { return mean(mul(x[0], x[0])); }, {m(5, 3)});
}

TEST_F(OpGrad, WindowGatherScatter) {
  const std::vector<Index> offsets = {0, 3, 3, 5};
  expect_grad([&](Tape&, std::vector<Var>& x) { return weighted_sum(gather_windows(x[0], offsets, 4)); },
              {m(4, 9)});
  const std::vector<Index> rows = {0, 1, 0, 2};
  expect_grad(
      [&](Tape&, std::vector<Var>& x) { return weighted_sum(scatter_add_windows(x[0], x[1], rows, offsets)); },
      {m(3, 9), m(4, 4)});
  expect_grad([](Tape&, std::vector<Var>& x) { return weighted_sum(embed_cols(x[0], 8, 3)); }, {m(3, 4)});
}

TEST_F(OpGrad, Losses) {
  const std::vector<double> y = {0.5, -1.0, 2.0, 0.0, 1.5, -0.3, 0.9};
  expect_grad([&](Tape&, std::vector<Var>& x) { return rmse_loss(x[0], y); }, {m(7, 1)});
  const std::vector<double> b = {1, 0, 0, 1, 1, 0, 1};
  expect_grad([&](Tape&, std::vector<Var>& x) { return bce_with_logits(x[0], b); }, {m(7, 1, 3.0)});
}

TEST(Autograd, ForwardValues) {
  Tape tape;
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  Var x = tape.constant(a);
  EXPECT_EQ(mean_rows(x).value(), (Matrix(1, 3) << 2.5, 3.5, 4.5).finished());
  EXPECT_DOUBLE_EQ(sum(x).value()(0, 0), 21.0);
  EXPECT_DOUBLE_EQ(mean(x).value()(0, 0), 3.5);
  const std::vector<Index> offsets = {1, 0};
  EXPECT_EQ(gather_windows(x, offsets, 2).value(), (Matrix(2, 2) << 2, 3, 4, 5).finished());
  const Matrix e = embed_cols(x, 5, 1).value();
  EXPECT_EQ(e, (Matrix(2, 5) << 0, 1, 2, 3, 0, 0, 4, 5, 6, 0).finished());
}

TEST(Autograd, ScatterOverlapsAccumulate) {
  Tape tape;
  Var base = tape.constant(Matrix::Zero(1, 4));
  Var vals = tape.constant(Matrix::Ones(2, 2));
  const std::vector<Index> rows = {0, 0};
  const std::vector<Index> offsets = {0, 1};
  EXPECT_EQ(scatter_add_windows(base, vals, rows, offsets).value(), (Matrix(1, 4) << 1, 2, 1, 0).finished());
}

TEST(Autograd, MaskedEntriesAreExactlyZero) {
  Tape tape;
  Mask visible(2, 3);
  visible << true, false, false, true, true, false;
  const Matrix s = masked_softmax_rows(tape.constant(Matrix::Ones(2, 3)), visible).value();
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_EQ(s(0, 2), 0.0);
  EXPECT_EQ(s(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(s(1, 0), 0.5);
  Mask none(1, 2);
  none << false, false;
  EXPECT_THROW(masked_softmax_rows(tape.constant(Matrix::Ones(1, 2)), none), ShapeError);
}

TEST(Autograd, DetachBlocksGradient) {
  Tape tape;
  Var x = tape.variable(Matrix::Ones(2, 2));
  Var y = add(detach(x), scale(x, 2.0));
  tape.backward(sum(y));
  ASSERT_NE(tape.grad(x), nullptr);
  EXPECT_TRUE((tape.grad(x)->array() == 2.0).all());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Tape tape;
  Var x = tape.variable(Matrix::Constant(1, 1, 3.0));
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ((*tape.grad(x))(0, 0), 6.0);
}

TEST(Autograd, FrozenParameterGetsNoGradient) {
  Parameter frozen{"frozen", Matrix::Ones(2, 2), false, {}};
  Parameter live{"live", Matrix::Ones(2, 2), true, {}};
  Tape tape;
  Var f = tape.parameter(frozen);
  Var l = tape.parameter(live);
  EXPECT_FALSE(f.requires_grad());
  EXPECT_EQ(tape.parameter(live).id(), l.id());
  tape.backward(sum(mul(f, l)));
  EXPECT_EQ(frozen.grad.size(), 0);
  EXPECT_TRUE((live.grad.array() == 1.0).all());
}

TEST(Autograd, UnreachedTrainableParameterGetsZeros) {
  Parameter a{"a", Matrix::Ones(1, 2), true, {}};
  Parameter b{"b", Matrix::Ones(3, 1), true, {}};
  Tape tape;
  Var va = tape.parameter(a);
  tape.parameter(b);
  tape.backward(sum(va));
  ASSERT_EQ(b.grad.rows(), 3);
  EXPECT_TRUE((b.grad.array() == 0.0).all());
}

TEST(Autograd, NonScalarLossThrows) {
  Tape tape;
  Var x = tape.variable(Matrix::Ones(2, 1));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Autograd, NonFiniteConstantThrows) {
  Tape tape;
  EXPECT_THROW(tape.constant(Matrix::Constant(1, 1, std::nan(""))), NumericError);
}

TEST(Autograd, NonFiniteOpOutputThrows) {
  Tape tape;
  Var x = tape.constant(Matrix::Constant(1, 1, 1e300));
  EXPECT_THROW(mul(x, x), NumericError);
}

TEST(Autograd, ForeignNodeRejected) {
  Tape a, b;
  Var x = a.variable(Matrix::Ones(1, 1));
  Var y = b.variable(Matrix::Ones(1, 1));
  EXPECT_THROW(add(x, y), Error);
}

// -- losses -------------------------------------------------------------------

TEST(Losses, RmsePerfectFitIsZeroWithZeroGradient) {
  Tape tape;
  const std::vector<double> y = {1.0, -2.0, 0.5};
  Var p = tape.variable((Matrix(3, 1) << 1.0, -2.0, 0.5).finished());
  Var loss = rmse_loss(p, y);
  EXPECT_EQ(loss.value()(0, 0), 0.0);
  tape.backward(loss);
  EXPECT_TRUE((tape.grad(p)->array() == 0.0).all());
}

TEST(Losses, RmseUnitOffset) {
  Tape tape;
  const std::vector<double> y = {0.0, 1.0, 2.0};
  EXPECT_DOUBLE_EQ(rmse_loss(tape.constant((Matrix(3, 1) << 1.0, 2.0, 3.0).finished()), y).value()(0, 0), 1.0);
}

TEST(Losses, RmseMatchesTwoPassOracle) {
  Rng rng(31);
  const Matrix p = rng.normal_matrix(7, 1);
  std::vector<double> y(7);
  for (double& v : y) v = rng.normal();
  double mean_sq = 0.0;
  for (int i = 0; i < 7; ++i) mean_sq += (p(i, 0) - y[i]) * (p(i, 0) - y[i]);
  mean_sq /= 7.0;
  Tape tape;
  EXPECT_NEAR(rmse_loss(tape.constant(p), y).value()(0, 0), std::sqrt(mean_sq), 1e-12);
}

TEST(Losses, BceAtZeroLogitIsLn2) {
  Tape tape;
  for (const double y : {0.0, 1.0}) {
    const std::vector<double> labels = {y};
    EXPECT_NEAR(bce_with_logits(tape.constant(Matrix::Zero(1, 1)), labels).value()(0, 0), std::log(2.0), 1e-9);
  }
}

TEST(Losses, BceConfidentCorrectGoesToZero) {
  Tape tape;
  const std::vector<double> labels = {1.0, 0.0};
  const double l = bce_with_logits(tape.constant((Matrix(2, 1) << 40.0, -40.0).finished()), labels).value()(0, 0);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-15);
  const double big = bce_with_logits(tape.constant((Matrix(2, 1) << -800.0, 800.0).finished()), labels).value()(0, 0);
  EXPECT_NEAR(big, 800.0, 1e-9);
}

TEST(Losses, BceMatchesDirectFormula) {
  Rng rng(32);
  const Matrix z = rng.normal_matrix(9, 1, 2.0);
  std::vector<double> y(9);
  for (double& v : y) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  double direct = 0.0;
  for (int i = 0; i < 9; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(i, 0)));
    direct -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  direct /= 9.0;
  Tape tape;
  EXPECT_NEAR(bce_with_logits(tape.constant(z), y).value()(0, 0), direct, 1e-10);
}

TEST(Losses, ShapeErrors) {
  Tape tape;
  const std::vector<double> two = {0.0, 1.0};
  EXPECT_THROW(rmse_loss(tape.constant(Matrix::Zero(3, 1)), two), ShapeError);
  EXPECT_THROW(bce_with_logits(tape.constant(Matrix::Zero(2, 2)), two), ShapeError);
  EXPECT_THROW(rmse_loss(tape.constant(Matrix::Zero(0, 1)), std::vector<double>{}), ShapeError);
}

}  // namespace
}  // namespace mmprompt
