#pragma once

// Minimal reverse-mode differentiation over double-precision matrices.
//
// A Tape records every operation in execution order, so append order is a
// valid topological order and backward() is a single reverse sweep. Leaves
// are constants, free variables (used by gradient checks) or Parameters;
// a frozen Parameter is recorded as a leaf that does not require gradients,
// so nothing is ever allocated or accumulated for it.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmprompt/tensor.hpp"

namespace mmprompt {

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
  /// Empty until the first backward pass that reaches a trainable parameter.
  Matrix grad;

  void zero_grad() {
    if (grad.size() != 0) grad.setZero();
  }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape {
 public:
  /// Receives the gradient flowing into the node; pushes it to the parents
  /// through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Free leaf that requires a gradient; read it back with grad().
  Var variable(Matrix value);
  /// Leaf bound to a Parameter; requires a gradient iff the parameter is trainable.
  /// Recorded once per tape; later calls return the same node. The parameter
  /// must outlive backward().
  Var parameter(Parameter& p);

  /// Records an op result. The node requires a gradient iff any parent does;
  /// otherwise `fn` is dropped.
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);

  /// Reverse sweep from a 1x1 loss. Adds leaf gradients into trainable
  /// Parameter::grad; every trainable parameter on the tape ends up with a
  /// gradient of its own shape (zeros if unreached).
  void backward(Var loss);

  /// Gradient of a node after backward(), or nullptr when none flowed.
  const Matrix* grad(Var v) const;

  void accumulate(Var v, const Matrix& g);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);
  void check_owned(Var v, const char* where) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

/// Owns parameters at stable addresses (tapes keep pointers to them).
class ParameterSet {
 public:
  Parameter& add(std::string name, Matrix value, bool trainable = true) {
    params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(value), trainable, {}}));
    return *params_.back();
  }
  std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::size_t size() const noexcept { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// -- Differentiable ops --------------------------------------------------------

/// Same values, no gradient flow back through the result.
Var detach(Var x);

Var matmul(Var a, Var b);
Var transpose(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);

/// x (n x d) plus a 1 x d row broadcast over all rows.
Var add_row(Var x, Var row);
/// x (n x d) times a 1 x d row broadcast over all rows.
Var mul_row(Var x, Var row);
/// 1 x d row repeated n times.
Var broadcast_rows(Var row, Index n);

Var gelu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);

Var softmax_rows(Var x);
/// Row softmax restricted to `visible` entries; hidden entries are exactly 0.
/// Every row needs at least one visible entry.
Var masked_softmax_rows(Var x, const Mask& visible);
/// Row layer norm (eps 1e-5) followed by per-channel gain and bias (1 x d each).
Var layernorm(Var x, Var gain, Var bias);

Var slice_rows(Var x, Index start, Index count);
Var slice_cols(Var x, Index start, Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

/// Mean over rows: n x d -> 1 x d.
Var mean_rows(Var x);
Var sum(Var x);
Var mean(Var x);

/// Row r of the result is x[r, offsets[r] : offsets[r] + width].
Var gather_windows(Var x, std::span<const Index> offsets, Index width);
/// base with values[k] added onto base[rows[k], offsets[k] : offsets[k] + width].
/// Overlapping writes accumulate.
Var scatter_add_windows(Var base, Var values, std::span<const Index> rows, std::span<const Index> offsets);
/// Zero-pads x (n x w) to n x total with x occupying columns [offset, offset + w).
Var embed_cols(Var x, Index total, Index offset);

/// sqrt(mean((preds - labels)^2)); preds is N x 1. The gradient at a perfect
/// fit is defined as zero.
Var rmse_loss(Var preds, std::span<const double> labels);
/// Mean binary cross-entropy of logistic(logits) against {0,1} labels,
/// evaluated in the stable logit form.
Var bce_with_logits(Var logits, std::span<const double> labels);

double logistic(double z);

}  // namespace mmprompt
