#include <cmath>

#include <gtest/gtest.h>

#include "mmprompt/errors.hpp"
#include "mmprompt/pafis.hpp"
#include "test_support.hpp"

namespace mmprompt {
namespace {

// Single-pass textbook formula, deliberately different from the two-pass kernel.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& w) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sw = 0, sxx = 0, sww = 0, sxw = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sw += w[i];
    sxx += x[i] * x[i];
    sww += w[i] * w[i];
    sxw += x[i] * w[i];
  }
  const double den = std::sqrt((n * sxx - sx * sx) * (n * sww - sw * sw));
  return den == 0.0 ? 0.0 : (n * sxw - sx * sw) / den;
}

std::vector<double> to_vec(const Matrix& row) { return {row.data(), row.data() + row.size()}; }

TEST(WindowPearson, MatchesDirectFormula) {
  Rng rng(100);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(30));
    const Matrix x = rng.normal_matrix(1, n, 0.1 + 3 * rng.uniform());
    Matrix w = rng.normal_matrix(1, n, 0.1 + 3 * rng.uniform());
    w.array() += 5 * rng.normal();
    EXPECT_LT(std::abs(window_pearson(x.row(0), w.row(0)) - pearson_oracle(to_vec(x), to_vec(w))), 1e-10);
  }
}

TEST(WindowPearson, EdgeCases) {
  Matrix x(1, 4), w(1, 4);
  x << 1, 2, 3, 4;
  EXPECT_DOUBLE_EQ(window_pearson(x.row(0), x.row(0)), 1.0);
  EXPECT_DOUBLE_EQ(window_pearson(x.row(0), Matrix(-x).row(0)), -1.0);
  w << 7, 7, 7, 7;
  EXPECT_EQ(window_pearson(x.row(0), w.row(0)), 0.0);
  EXPECT_EQ(window_pearson(w.row(0), x.row(0)), 0.0);
  // Shift and positive scale invariance.
  EXPECT_NEAR(window_pearson(x.row(0), Matrix((3.0 * x).array() + 11.0).row(0)), 1.0, 1e-15);
  EXPECT_THROW(window_pearson(x.row(0), Matrix::Zero(1, 3).row(0)), ShapeError);
  EXPECT_THROW(window_pearson(Matrix::Zero(1, 1).row(0), Matrix::Zero(1, 1).row(0)), ShapeError);
}

TEST(WindowPearson, NearConstantWithLargeMeanIsZero) {
  Matrix x(1, 5), w(1, 5);
  x << 1, 2, 3, 4, 5;
  w.setConstant(1e8);
  w(0, 2) += 1e-9;  // below the representable spacing at 1e8
  EXPECT_EQ(window_pearson(x.row(0), w.row(0)), 0.0);
}

TEST(WindowPearson, FloatInstantiation) {
  Matrixf x(1, 3), w(1, 3);
  x << 1, 2, 3;
  w << 2, 4, 6.5f;
  EXPECT_NEAR(window_pearson(x.row(0), w.row(0)), 0.99794871f, 1e-5f);
}

TEST(CorrMap, AlignedMatchesLoopOracleExactly) {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Index l = 1 + static_cast<Index>(rng.below(8));
    const Index d_m = 2 + static_cast<Index>(rng.below(6));
    const Index d_t = d_m + 1 + static_cast<Index>(rng.below(10));
    const Matrix h_m = rng.normal_matrix(l, d_m);
    const Matrix h_t = rng.normal_matrix(l, d_t);
    const Matrix k = corr_map_aligned(h_m, h_t);
    ASSERT_EQ(k.rows(), l);
    ASSERT_EQ(k.cols(), d_t - d_m);
    for (Index r = 0; r < l; ++r) {
      for (Index j = 0; j < d_t - d_m; ++j) {
        const Matrix window = h_t.block(r, j, 1, d_m);
        EXPECT_EQ(k(r, j), window_pearson(h_m.row(r), window.row(0)));
      }
    }
  }
}

TEST(CorrMap, RowMismatchAndWidthErrors) {
  EXPECT_THROW(corr_map_aligned(Matrix::Zero(3, 4), Matrix::Zero(2, 10)), ShapeError);
  EXPECT_THROW(corr_map_aligned(Matrix::Zero(3, 10), Matrix::Zero(3, 10)), ShapeError);
  EXPECT_THROW(offset_count(8, 9), ShapeError);
  EXPECT_EQ(offset_count(64, 16), 48);
}

TEST(CorrMap, UnalignedPoolsFirst) {
  Rng rng(102);
  const Matrix h_m = rng.normal_matrix(5, 4);
  const Matrix h_t = rng.normal_matrix(9, 12);
  const auto pooled = corr_map_unaligned(h_m, h_t);
  ASSERT_EQ(pooled.corr.rows(), 1);
  ASSERT_EQ(pooled.corr.cols(), 8);
  const Matrix pm = h_m.colwise().mean();
  const Matrix pt = h_t.colwise().mean();
  for (Index j = 0; j < 8; ++j) {
    const Matrix window = pt.block(0, j, 1, 4);
    EXPECT_NEAR(pooled.corr(0, j), pearson_oracle(to_vec(pm), to_vec(window)), 1e-12);
  }
}

TEST(Select, TiesGoToSmallestOffset) {
  Matrix k(2, 5);
  k << 0.2, 0.9, 0.9, -0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0;
  const SelectionMap s = select_channels(k, 3, true);
  EXPECT_EQ(s.k_max, (std::vector<Index>{1, 0}));
  EXPECT_EQ(s.k_min, (std::vector<Index>{3, 0}));
  EXPECT_EQ(s.c_max(0).begin, 1);
  EXPECT_EQ(s.c_max(0).end, 4);
}

TEST(Select, NonFiniteThrows) {
  Matrix k = Matrix::Zero(1, 3);
  k(0, 1) = std::nan("");
  EXPECT_THROW(select_channels(k, 2, true), NumericError);
}

TEST(Pafis, PlantedCopyIsSelected) {
  Rng rng(103);
  const Index l = 6, d_m = 4, d_t = 16, planted = 7;
  Matrix h_t = rng.normal_matrix(l, d_t);
  const Matrix h_m = rng.normal_matrix(l, d_m);
  h_t.middleCols(planted, d_m) = 2.0 * h_m.array() + 1.0;
  const SelectionMap s = select_channels(corr_map_aligned(h_m, h_t), d_m, true);
  for (Index r = 0; r < l; ++r) EXPECT_EQ(s.k_max[static_cast<std::size_t>(r)], planted);
}

// Hand-computed prompt for a tiny aligned case.
TEST(Pafis, AlignedAssemblyByHand) {
  const Matrix p_tilde = Matrix::Zero(2, 6);
  Matrix h_t(3, 6);
  h_t << 1, 2, 3, 0, 0, 0,   //
      0, 0, 1, 5, 2, 0,      //
      3, 1, 2, 9, 9, 9;
  Matrix h_m(3, 3);
  h_m << 1, 2, 3,  //
      1, 5, 2,     //
      1, 2, 3;
  const ModalityState mods[] = {{"a", h_m, true}};
  const PafisResult r = pafis(p_tilde, h_t, mods);
  ASSERT_EQ(r.selections.size(), 1u);
  const SelectionMap& s = r.selections[0];
  // Offsets 0..2 are scanned. Row 0 matches at 0, row 1 at 2.
  EXPECT_EQ(s.k_max[0], 0);
  EXPECT_EQ(s.k_max[1], 2);
  Matrix expected = p_tilde;
  for (Index j = 0; j < 3; ++j) {
    const auto i = static_cast<std::size_t>(j);
    expected.row(j % 2).segment(s.k_max[i], 3) += h_m.row(j) + h_t.row(j).segment(s.k_max[i], 3);
    expected.row(j % 2).segment(s.k_min[i], 3) += h_m.row(j) - h_t.row(j).segment(s.k_min[i], 3);
  }
  EXPECT_EQ(r.prompt, expected);
  // Row 0 of the prompt collects tokens 0 and 2, row 1 token 1.
  Matrix only_token1 = Matrix::Zero(2, 6);
  only_token1.row(1).segment(2, 3) += h_m.row(1) + h_t.row(1).segment(2, 3);
  only_token1.row(1).segment(s.k_min[1], 3) += h_m.row(1) - h_t.row(1).segment(s.k_min[1], 3);
  EXPECT_EQ(r.prompt.row(1), only_token1.row(1));
}

TEST(Pafis, UnalignedBroadcastsPooledPair) {
  Rng rng(104);
  const Matrix p_tilde = rng.normal_matrix(3, 10);
  const Matrix h_t = rng.normal_matrix(5, 10);
  const Matrix h_m = rng.normal_matrix(7, 4);
  const ModalityState mods[] = {{"v", h_m, false}};
  const PafisResult r = pafis(p_tilde, h_t, mods);
  const RowVector<double> pm = h_m.colwise().mean();
  const RowVector<double> pt = h_t.colwise().mean();
  // Oracle: scan windows of the pooled text myself.
  Index best = 0, worst = 0;
  double vb = -2, vw = 2;
  for (Index j = 0; j < 6; ++j) {
    const RowVector<double> win = pt.segment(j, 4);
    const double c = pearson_oracle({pm.data(), pm.data() + 4}, {win.data(), win.data() + 4});
    if (c > vb) vb = c, best = j;
    if (c < vw) vw = c, worst = j;
  }
  Matrix expected = p_tilde;
  for (Index row = 0; row < 3; ++row) {
    expected.row(row).segment(best, 4) += pm + pt.segment(best, 4);
    expected.row(row).segment(worst, 4) += pm - pt.segment(worst, 4);
  }
  EXPECT_LT((r.prompt - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pafis, ModalitiesApplySequentiallyAndNoneIsIdentity) {
  Rng rng(105);
  const Matrix p_tilde = rng.normal_matrix(4, 12);
  const Matrix h_t = rng.normal_matrix(6, 12);
  const ModalityState a{"a", rng.normal_matrix(6, 4), true};
  const ModalityState v{"v", rng.normal_matrix(3, 4), false};
  EXPECT_EQ(pafis(p_tilde, h_t, {}).prompt, p_tilde);
  const ModalityState both[] = {a, v};
  const ModalityState only_a[] = {a};
  const ModalityState only_v[] = {v};
  const Matrix pa = pafis(p_tilde, h_t, only_a).prompt;
  const Matrix chained = pafis(pa, h_t, only_v).prompt;
  EXPECT_LT((pafis(p_tilde, h_t, both).prompt - chained).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pafis, PromptShapeIsLpByDt) {
  Rng rng(106);
  for (const Index l_p : {1, 3, 8, 20}) {
    for (const Index l_t : {1, 5, 16}) {
      const ModalityState mods[] = {{"a", rng.normal_matrix(l_t, 4), true}, {"v", rng.normal_matrix(7, 4), false}};
      const Matrix p = pafis(rng.normal_matrix(l_p, 12), rng.normal_matrix(l_t, 12), mods).prompt;
      EXPECT_EQ(p.rows(), l_p);
      EXPECT_EQ(p.cols(), 12);
    }
  }
}

TEST(Pafis, GraphMatchesValuesAndSelectionIsDetached) {
  Rng rng(107);
  const Matrix p_tilde = rng.normal_matrix(3, 10);
  const Matrix h_t = rng.normal_matrix(5, 10);
  const Matrix h_a = rng.normal_matrix(5, 4);
  const Matrix h_v = rng.normal_matrix(2, 4);
  const ModalityState values[] = {{"a", h_a, true}, {"v", h_v, false}};
  const PafisResult ref = pafis(p_tilde, h_t, values);

  Tape tape;
  Var vp = tape.variable(p_tilde), vt = tape.variable(h_t), va = tape.variable(h_a), vv = tape.variable(h_v);
  const ModalityVar mods[] = {{"a", va, true}, {"v", vv, false}};
  std::vector<SelectionMap> sel;
  Var p = assemble_prompt(vp, vt, mods, &sel);
  EXPECT_LT((p.value() - ref.prompt).cwiseAbs().maxCoeff(), 1e-12);
  ASSERT_EQ(sel.size(), 2u);
  EXPECT_EQ(sel[0].k_max, ref.selections[0].k_max);
  EXPECT_EQ(sel[1].k_min, ref.selections[1].k_min);

  // With the selection fixed the map is linear, so d(sum p)/d(p~) is all ones
  // and d(sum p)/d(h_t) only has entries +-1 inside the selected windows.
  tape.backward(sum(p));
  EXPECT_TRUE((tape.grad(vp)->array() == 1.0).all());
  const Matrix& gt = *tape.grad(vt);
  EXPECT_TRUE((gt.array().abs() <= 3.0 * 2 + 1e-12).all());
}

TEST(Pafis, GradientsThroughAssembly) {
  Rng rng(108);
  const std::vector<Matrix> inputs = {rng.normal_matrix(3, 10), rng.normal_matrix(5, 10), rng.normal_matrix(5, 4),
                                      rng.normal_matrix(4, 4)};
  const auto r = testing::gradcheck(
      [](Tape&, std::vector<Var>& x) {
        const ModalityVar mods[] = {{"a", x[2], true}, {"v", x[3], false}};
        return testing::weighted_sum(assemble_prompt(x[0], x[1], mods));
      },
      inputs, 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Pafis, AlignedRowMismatchThrows) {
  Tape tape;
  Var p = tape.constant(Matrix::Zero(2, 10));
  Var t = tape.constant(Matrix::Ones(4, 10));
  const ModalityVar mods[] = {{"a", tape.constant(Matrix::Ones(3, 4)), true}};
  EXPECT_THROW(assemble_prompt(p, t, mods), ShapeError);
}

}  // namespace
}  // namespace mmprompt
