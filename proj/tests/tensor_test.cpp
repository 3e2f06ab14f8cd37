#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "mmprompt/errors.hpp"
#include "mmprompt/rng.hpp"
#include "mmprompt/tensor.hpp"

namespace mmprompt {
namespace {

Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

TEST(Matmul, IdentityAndZeros) {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(2, 2);
  EXPECT_EQ(matmul(Matrix::Identity(2, 2), a), a);
  const Matrix z = matmul(Matrix::Zero(2, 3), Matrix::Ones(3, 4));
  EXPECT_EQ(z.rows(), 2);
  EXPECT_EQ(z.cols(), 4);
  EXPECT_TRUE((z.array() == 0.0).all());
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = rng.normal_matrix(3, 3);
    const Matrix b = rng.normal_matrix(3, 3);
    EXPECT_LT((matmul(a, b) - naive_product(a, b)).cwiseAbs().maxCoeff(), 1e-12);
  }
  const Matrix a = rng.normal_matrix(7, 5);
  const Matrix b = rng.normal_matrix(5, 9);
  EXPECT_LT((matmul(a, b) - naive_product(a, b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Matmul, InnerMismatchThrows) {
  EXPECT_THROW(matmul(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ShapeError);
}

TEST(Matmul, RejectsNonFinite) {
  Matrix a = Matrix::Ones(2, 2);
  a(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(matmul(a, Matrix::Ones(2, 2)), NumericError);
}

TEST(ReduceMean, Basics) {
  Matrix row(1, 3);
  row << 1, 2, 3;
  EXPECT_DOUBLE_EQ(reduce_mean(row, 1)(0, 0), 2.0);
  const Matrix c = Matrix::Constant(4, 3, 2.5);
  EXPECT_TRUE((reduce_mean(c, 0).array() == 2.5).all());
  EXPECT_TRUE((reduce_mean(c, 1).array() == 2.5).all());
}

TEST(ReduceMean, MatchesColumnSums) {
  Rng rng(3);
  const Matrix a = rng.normal_matrix(5, 4);
  const Matrix m = reduce_mean(a, 0);
  ASSERT_EQ(m.rows(), 1);
  ASSERT_EQ(m.cols(), 4);
  for (Index c = 0; c < 4; ++c) {
    double s = 0.0;
    for (Index r = 0; r < 5; ++r) s += a(r, c);
    EXPECT_NEAR(m(0, c), s / 5.0, 1e-12);
  }
}

TEST(ReduceMean, EmptyAxisThrows) {
  EXPECT_THROW(reduce_mean(Matrix(0, 3), 0), ShapeError);
  EXPECT_THROW(reduce_mean(Matrix::Zero(2, 2), 2), ShapeError);
}

TEST(Elementwise, ShapeMismatchThrows) {
  EXPECT_THROW(add(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ShapeError);
  EXPECT_THROW(sub(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), ShapeError);
  EXPECT_THROW(mul(Matrix::Zero(1, 2), Matrix::Zero(2, 1)), ShapeError);
}

TEST(Elementwise, Values) {
  Matrix a(1, 3), b(1, 3);
  a << 1, 2, 3;
  b << 4, 5, 6;
  EXPECT_EQ(Matrix(add(a, b)), (Matrix(1, 3) << 5, 7, 9).finished());
  EXPECT_EQ(Matrix(sub(a, b)), (Matrix(1, 3) << -3, -3, -3).finished());
  EXPECT_EQ(Matrix(mul(a, b)), (Matrix(1, 3) << 4, 10, 18).finished());
  EXPECT_EQ(Matrix(scale(a, 2.0)), (Matrix(1, 3) << 2, 4, 6).finished());
  EXPECT_EQ(Matrix(add_scalar(a, 1.0)), (Matrix(1, 3) << 2, 3, 4).finished());
}

TEST(Softmax, UniformOnEqualInputs) {
  const Matrix s = softmax_rows(Matrix::Zero(1, 3));
  for (Index c = 0; c < 3; ++c) EXPECT_NEAR(s(0, c), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(4);
  const Matrix x = rng.normal_matrix(1000, 9, 5.0);
  const Matrix s = softmax_rows(x);
  for (Index r = 0; r < s.rows(); ++r) {
    EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-9);
    EXPECT_TRUE((s.row(r).array() >= 0.0).all());
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  Matrix x(1, 2);
  x << 1000.0, 0.0;
  const Matrix s = softmax_rows(x);
  EXPECT_NEAR(s(0, 0), 1.0, 1e-12);
  EXPECT_TRUE(s.allFinite());
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  const Matrix y = layernorm_rows(Matrix::Constant(1, 8, 3.0));
  EXPECT_LT(y.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, RowMoments) {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(1000, 16, 3.0);
  const Matrix y = layernorm_rows(x);
  for (Index r = 0; r < y.rows(); ++r) {
    const double mean = y.row(r).mean();
    const double var = (y.row(r).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-9);
    // The epsilon pulls the variance just below one.
    EXPECT_NEAR(var, 1.0, 1e-5);
    const double raw_var = (x.row(r).array() - x.row(r).mean()).square().mean();
    EXPECT_NEAR(var, raw_var / (raw_var + kLayerNormEps), 1e-9);
  }
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(gelu_scalar(0.0), 0.0);
  EXPECT_NEAR(gelu_scalar(1.0), 0.8413447460685429, 1e-12);
  EXPECT_NEAR(gelu_scalar(-1.0), -0.15865525393145707, 1e-12);
  for (double x = -4.0; x <= 4.0; x += 0.25) {
    const double h = 1e-6;
    const double fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2 * h);
    EXPECT_NEAR(gelu_grad_scalar(x), fd, 1e-8);
  }
}

TEST(Gelu, TemplatedOnFloat) {
  Matrixf x = Matrixf::Zero(2, 2);
  x(0, 1) = 1.0f;
  const Matrixf y = gelu(x);
  EXPECT_FLOAT_EQ(y(0, 0), 0.0f);
  EXPECT_NEAR(y(0, 1), 0.8413447f, 1e-6f);
}

class TensorFileTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("mmprompt_tensor_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(TensorFileTest, RoundTripF64) {
  Rng rng(6);
  const Matrix a = rng.normal_matrix(3, 5);
  write_tensor_file(dir_ / "a.bin", a, DType::F64);
  EXPECT_EQ(std::filesystem::file_size(dir_ / "a.bin"), 3u * 5u * 8u);
  EXPECT_EQ(read_tensor_file(dir_ / "a.bin", 3, 5, DType::F64), a);
}

TEST_F(TensorFileTest, RoundTripF32LosesOnlyPrecision) {
  Rng rng(7);
  const Matrix a = rng.normal_matrix(4, 2);
  write_tensor_file(dir_ / "a.bin", a, DType::F32);
  EXPECT_EQ(std::filesystem::file_size(dir_ / "a.bin"), 4u * 2u * 4u);
  EXPECT_LT((read_tensor_file(dir_ / "a.bin", 4, 2, DType::F32) - a).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(TensorFileTest, RowMajorLittleEndianLayout) {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  write_tensor_file(dir_ / "a.bin", a, DType::F64);
  std::ifstream in(dir_ / "a.bin", std::ios::binary);
  double v[4];
  in.read(reinterpret_cast<char*>(v), sizeof v);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(v[1], 2.0);
  EXPECT_EQ(v[2], 3.0);
  EXPECT_EQ(v[3], 4.0);
}

TEST_F(TensorFileTest, IntRoundTrip) {
  const std::vector<std::int32_t> v = {0, -3, 255, 7};
  write_int_file(dir_ / "t.bin", v);
  EXPECT_EQ(read_int_file(dir_ / "t.bin", 4), v);
}

TEST_F(TensorFileTest, ErrorsHaveDistinctKinds) {
  try {
    read_tensor_file(dir_ / "missing.bin", 1, 1, DType::F64);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::MissingFile);
  }
  write_tensor_file(dir_ / "a.bin", Matrix::Ones(2, 2), DType::F64);
  try {
    read_tensor_file(dir_ / "a.bin", 3, 2, DType::F64);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataError::Kind::ShapeMismatch);
  }
}

TEST(DType, Names) {
  EXPECT_EQ(parse_dtype(dtype_name(DType::F32)), DType::F32);
  EXPECT_EQ(parse_dtype("f64"), DType::F64);
  EXPECT_EQ(dtype_size(DType::I32), 4u);
  EXPECT_THROW(parse_dtype("f16"), Error);
}

}  // namespace
}  // namespace mmprompt
