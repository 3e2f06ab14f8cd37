#pragma once

// Dense row-major arrays and the elementary operations the rest of the
// library is built from. Everything here is a pure function: inputs are
// never modified and results are freshly allocated. Every public op checks
// its result for NaN/Inf and throws NumericError instead of propagating it.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mmprompt/errors.hpp"

namespace mmprompt {

using Index = Eigen::Index;

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Tensor<double>;
using Matrixf = Tensor<float>;

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << '[' << r << 'x' << c << ']';
  return os.str();
}

}  // namespace detail

template <typename Derived>
void ensure_finite(const Eigen::MatrixBase<Derived>& x, std::string_view where) {
  if (!x.allFinite()) {
    throw NumericError(std::string(where) + ": non-finite value");
  }
}

template <typename A, typename B>
void ensure_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                       std::string_view where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(where) + ": shape mismatch " +
                     detail::shape_str(a.rows(), a.cols()) + " vs " +
                     detail::shape_str(b.rows(), b.cols()));
  }
}

template <typename A, typename B>
auto matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + detail::shape_str(a.rows(), a.cols()) +
                     " x " + detail::shape_str(b.rows(), b.cols()));
  }
  Tensor<Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  ensure_finite(out, "matmul");
  return out;
}

/// Mean along `axis` (0: over rows -> 1 x cols, 1: over cols -> rows x 1).
/// Accumulates left to right.
template <typename A>
auto reduce_mean(const Eigen::MatrixBase<A>& a, int axis) {
  using Scalar = typename A::Scalar;
  if (axis != 0 && axis != 1) throw ShapeError("reduce_mean: axis must be 0 or 1");
  const Index n = axis == 0 ? a.rows() : a.cols();
  if (n == 0) throw ShapeError("reduce_mean: empty axis");
  Tensor<Scalar> out = axis == 0 ? Tensor<Scalar>::Zero(1, a.cols()) : Tensor<Scalar>::Zero(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    for (Index c = 0; c < a.cols(); ++c) {
      if (axis == 0) {
        out(0, c) += a(r, c);
      } else {
        out(r, 0) += a(r, c);
      }
    }
  }
  out /= static_cast<Scalar>(n);
  ensure_finite(out, "reduce_mean");
  return out;
}

template <typename A, typename B>
auto add(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  ensure_same_shape(a, b, "add");
  Tensor<typename A::Scalar> out = a + b;
  ensure_finite(out, "add");
  return out;
}

template <typename A, typename B>
auto sub(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  ensure_same_shape(a, b, "sub");
  Tensor<typename A::Scalar> out = a - b;
  ensure_finite(out, "sub");
  return out;
}

/// Elementwise (Hadamard) product.
template <typename A, typename B>
auto mul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  ensure_same_shape(a, b, "mul");
  Tensor<typename A::Scalar> out = a.cwiseProduct(b);
  ensure_finite(out, "mul");
  return out;
}

template <typename A>
auto scale(const Eigen::MatrixBase<A>& a, typename A::Scalar s) {
  Tensor<typename A::Scalar> out = a * s;
  ensure_finite(out, "scale");
  return out;
}

template <typename A>
auto add_scalar(const Eigen::MatrixBase<A>& a, typename A::Scalar s) {
  Tensor<typename A::Scalar> out = a.array() + s;
  ensure_finite(out, "add_scalar");
  return out;
}

template <typename A>
auto softmax_rows(const Eigen::MatrixBase<A>& a) {
  using Scalar = typename A::Scalar;
  Tensor<Scalar> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const Scalar m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

/// Normalises each row to zero mean and unit (biased) variance.
template <typename A>
auto layernorm_rows(const Eigen::MatrixBase<A>& a, double eps = kLayerNormEps) {
  using Scalar = typename A::Scalar;
  Tensor<Scalar> out(a.rows(), a.cols());
  const auto n = static_cast<Scalar>(a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const Scalar mean = a.row(r).sum() / n;
    const auto centered = (a.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / n;
    out.row(r) = (centered / std::sqrt(var + static_cast<Scalar>(eps))).matrix();
  }
  ensure_finite(out, "layernorm_rows");
  return out;
}

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return cdf + x * pdf;
}

/// Exact (erf-based) GELU.
template <typename A>
auto gelu(const Eigen::MatrixBase<A>& a) {
  using Scalar = typename A::Scalar;
  Tensor<Scalar> out = a.unaryExpr([](Scalar x) { return gelu_scalar(x); });
  ensure_finite(out, "gelu");
  return out;
}

// -- Raw tensor files --------------------------------------------------------
//
// Little-endian scalars, row-major, no header. Shape and dtype live in the
// JSON manifest that references the file.

enum class DType { F64, F32, I32 };

std::string_view dtype_name(DType t);
DType parse_dtype(std::string_view name);
std::size_t dtype_size(DType t);

void write_tensor_file(const std::filesystem::path& path, const Matrix& m, DType dtype = DType::F64);
void write_int_file(const std::filesystem::path& path, const std::vector<std::int32_t>& values);

/// Throws DataError(MissingFile) / DataError(ShapeMismatch).
Matrix read_tensor_file(const std::filesystem::path& path, Index rows, Index cols, DType dtype);
std::vector<std::int32_t> read_int_file(const std::filesystem::path& path, std::size_t count);

}  // namespace mmprompt
