#pragma once

// Parameter-free invariant/specific prompt generation.
//
// For each prompting layer the learnable prompt p~ (l_p x d_t) is used as a
// container: the text hidden states are scanned with a sliding window of
// width d_m, each window is Pearson-correlated with the modality state, and
// the most correlated window (invariant) and least correlated window
// (specific) are written back into the prompt:
//
//   p[c_max] = p~[c_max] + (h_m + h_t[c_max])
//   p[c_min] = p~[c_min] + (h_m - h_t[c_min])
//
// Aligned modalities (one row per text token) select per token; token j
// writes into prompt row j mod l_p. Unaligned modalities are average-pooled
// over time first and the single selected pair is written into every prompt
// row. Offsets range over 0 .. d_t - d_m - 1, ties go to the smallest offset,
// and a zero-variance argument correlates as 0. Overlapping writes add.
//
// The kernels below are scalar-templated value functions. assemble_prompt()
// at the bottom builds the same prompt on an autograd tape, with the
// selection computed on detached values.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmprompt/autograd.hpp"
#include "mmprompt/tensor.hpp"

namespace mmprompt {

/// Pearson correlation of two equally long vectors (row or column). Returns 0
/// when either argument has zero variance.
template <typename A, typename B>
typename A::Scalar window_pearson(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& w) {
  using Scalar = typename A::Scalar;
  const Index n = x.size();
  if (n != w.size()) throw ShapeError("window_pearson: length mismatch");
  if (n < 2) throw ShapeError("window_pearson: need at least 2 channels");
  Scalar mx = 0, mw = 0;
  for (Index i = 0; i < n; ++i) {
    mx += x(i);
    mw += w(i);
  }
  mx /= static_cast<Scalar>(n);
  mw /= static_cast<Scalar>(n);
  Scalar sxx = 0, sww = 0, sxw = 0, dx_max = 0, dw_max = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar dx = x(i) - mx;
    const Scalar dw = w(i) - mw;
    sxx += dx * dx;
    sww += dw * dw;
    sxw += dx * dw;
    dx_max = std::max(dx_max, std::abs(dx));
    dw_max = std::max(dw_max, std::abs(dw));
  }
  // Rounding in the mean leaves residue ~eps*|mean| for constant inputs.
  const Scalar tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon();
  if (dx_max <= tol * std::max(Scalar(1), std::abs(mx)) || dw_max <= tol * std::max(Scalar(1), std::abs(mw))) {
    return Scalar(0);
  }
  const Scalar r = sxw / std::sqrt(sxx * sww);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

/// Number of window offsets scanned for text width d_t and window width d_m.
inline Index offset_count(Index d_t, Index d_m) {
  if (d_m >= d_t) {
    throw ShapeError("modality width d_m=" + std::to_string(d_m) + " must be smaller than d_t=" + std::to_string(d_t));
  }
  return d_t - d_m;
}

/// K[r][j] = pearson(h_m[r], h_t[r][j : j + d_m]) for aligned inputs.
template <typename A, typename B>
Tensor<typename A::Scalar> corr_map_aligned(const Eigen::MatrixBase<A>& h_m, const Eigen::MatrixBase<B>& h_t) {
  if (h_m.rows() != h_t.rows()) {
    throw ShapeError("corr_map_aligned: " + std::to_string(h_m.rows()) + " modality rows vs " +
                     std::to_string(h_t.rows()) + " text rows; unaligned input needs the pooled path");
  }
  const Index d_m = h_m.cols();
  const Index n_off = offset_count(h_t.cols(), d_m);
  Tensor<typename A::Scalar> k(h_m.rows(), n_off);
  for (Index r = 0; r < h_m.rows(); ++r) {
    for (Index j = 0; j < n_off; ++j) k(r, j) = window_pearson(h_m.row(r), h_t.row(r).segment(j, d_m));
  }
  return k;
}

template <typename Scalar>
struct PooledCorrelation {
  Tensor<Scalar> corr;         ///< 1 x n_off
  Tensor<Scalar> pooled_m;     ///< 1 x d_m
  Tensor<Scalar> pooled_t;     ///< 1 x d_t
};

/// Temporal average pooling of both inputs, then a single correlation row.
template <typename A, typename B>
PooledCorrelation<typename A::Scalar> corr_map_unaligned(const Eigen::MatrixBase<A>& h_m,
                                                         const Eigen::MatrixBase<B>& h_t) {
  PooledCorrelation<typename A::Scalar> out;
  out.pooled_m = reduce_mean(h_m, 0);
  out.pooled_t = reduce_mean(h_t, 0);
  out.corr = corr_map_aligned(out.pooled_m, out.pooled_t);
  return out;
}

/// Channel window [k, k + width).
struct ChannelRange {
  Index begin = 0;
  Index end = 0;
};

struct SelectionMap {
  bool aligned = true;
  Index width = 0;                ///< d_m
  std::vector<Index> k_max;       ///< one per row of K
  std::vector<Index> k_min;
  Matrix corr;                    ///< K

  ChannelRange c_max(std::size_t i) const { return {k_max.at(i), k_max.at(i) + width}; }
  ChannelRange c_min(std::size_t i) const { return {k_min.at(i), k_min.at(i) + width}; }
};

/// Row-wise argmax/argmin of K with ties to the smallest offset.
template <typename A>
SelectionMap select_channels(const Eigen::MatrixBase<A>& corr, Index width, bool aligned) {
  if (!corr.allFinite()) throw NumericError("select_channels: non-finite correlation");
  if (corr.cols() < 1) throw ShapeError("select_channels: no offsets");
  SelectionMap sel;
  sel.aligned = aligned;
  sel.width = width;
  sel.corr = corr.template cast<double>();
  for (Index r = 0; r < corr.rows(); ++r) {
    Index best = 0, worst = 0;
    for (Index j = 1; j < corr.cols(); ++j) {
      if (corr(r, j) > corr(r, best)) best = j;
      if (corr(r, j) < corr(r, worst)) worst = j;
    }
    sel.k_max.push_back(best);
    sel.k_min.push_back(worst);
  }
  return sel;
}

namespace detail {

inline void check_range(const ChannelRange& c, Index d_t, const char* where) {
  if (c.begin < 0 || c.end > d_t) throw ShapeError(std::string(where) + ": channel range out of bounds");
}

}  // namespace detail

/// Aligned-case prompt assembly; token j writes into prompt row j mod l_p.
template <typename P, typename T, typename M>
Tensor<typename P::Scalar> assemble_aligned(const Eigen::MatrixBase<P>& p_tilde, const Eigen::MatrixBase<T>& h_t,
                                            const Eigen::MatrixBase<M>& h_m, const SelectionMap& sel) {
  const Index l = h_t.rows();
  const Index l_p = p_tilde.rows();
  const Index d_m = h_m.cols();
  if (h_m.rows() != l || static_cast<Index>(sel.k_max.size()) != l || sel.width != d_m) {
    throw ShapeError("assemble_aligned: selection does not match the aligned inputs");
  }
  if (p_tilde.cols() != h_t.cols()) throw ShapeError("assemble_aligned: prompt width differs from d_t");
  Tensor<typename P::Scalar> p = p_tilde;
  for (Index j = 0; j < l; ++j) {
    const auto i = static_cast<std::size_t>(j);
    const ChannelRange hi = sel.c_max(i);
    const ChannelRange lo = sel.c_min(i);
    detail::check_range(hi, h_t.cols(), "assemble_aligned");
    detail::check_range(lo, h_t.cols(), "assemble_aligned");
    const Index r = j % l_p;
    p.row(r).segment(hi.begin, d_m) += h_m.row(j) + h_t.row(j).segment(hi.begin, d_m);
    p.row(r).segment(lo.begin, d_m) += h_m.row(j) - h_t.row(j).segment(lo.begin, d_m);
  }
  return p;
}

/// Unaligned-case prompt assembly; the pooled pair is written into every row.
template <typename P, typename M, typename T>
Tensor<typename P::Scalar> assemble_unaligned(const Eigen::MatrixBase<P>& p_tilde, const Eigen::MatrixBase<M>& pooled_m,
                                              const Eigen::MatrixBase<T>& pooled_t, const SelectionMap& sel) {
  const Index d_m = pooled_m.size();
  if (sel.k_max.size() != 1 || sel.width != d_m) {
    throw ShapeError("assemble_unaligned: expected a single pooled selection");
  }
  if (p_tilde.cols() != pooled_t.size()) throw ShapeError("assemble_unaligned: prompt width differs from d_t");
  const ChannelRange hi = sel.c_max(0);
  const ChannelRange lo = sel.c_min(0);
  detail::check_range(hi, pooled_t.size(), "assemble_unaligned");
  detail::check_range(lo, pooled_t.size(), "assemble_unaligned");
  using Scalar = typename P::Scalar;
  const RowVector<Scalar> m = pooled_m.reshaped().transpose();
  const RowVector<Scalar> t = pooled_t.reshaped().transpose();
  const RowVector<Scalar> inv = m + t.segment(hi.begin, d_m);
  const RowVector<Scalar> spe = m - t.segment(lo.begin, d_m);
  Tensor<Scalar> p = p_tilde;
  for (Index r = 0; r < p.rows(); ++r) {
    p.row(r).segment(hi.begin, d_m) += inv;
    p.row(r).segment(lo.begin, d_m) += spe;
  }
  return p;
}

/// One modality's encoded state for a prompting layer.
struct ModalityState {
  std::string name;
  Matrix h_m;
  bool aligned = true;
};

struct PafisResult {
  Matrix prompt;
  std::vector<SelectionMap> selections;  ///< one per modality, in input order
};

/// Applies every present modality in order onto the same prompt. With no
/// modality the prompt is p~ unchanged.
PafisResult pafis(const Matrix& p_tilde, const Matrix& h_t, std::span<const ModalityState> modalities);

/// Graph-level counterpart of one modality's input to assemble_prompt().
struct ModalityVar {
  std::string name;
  Var h_m;
  bool aligned = true;
};

/// Builds p on the tape. Gradients reach p~, h_m and h_t through the additive
/// terms; the correlation map and the selected offsets are constants.
Var assemble_prompt(Var p_tilde, Var h_t, std::span<const ModalityVar> modalities,
                    std::vector<SelectionMap>* selections = nullptr);

}  // namespace mmprompt
