#include "mmprompt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace mmprompt {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v, const char* where) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw Error(std::string(where) + ": node does not belong to this tape");
  }
}

Var Tape::constant(Matrix value) {
  ensure_finite(value, "constant");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  ensure_finite(value, "variable");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  param_nodes_.emplace(&p, nodes_.size());
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  ensure_finite(value, "op output");
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    check_owned(p, "record");
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward: loss must be a scalar");
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    ensure_finite(n.grad, "backward");
    n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || !n.param->trainable) continue;
    Parameter& p = *n.param;
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    if (n.has_grad) p.grad += n.grad;
  }
}

const Matrix* Tape::grad(Var v) const {
  check_owned(v, "grad");
  const Node& n = nodes_[v.id_];
  return n.has_grad ? &n.grad : nullptr;
}

// -- ops -----------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("op on an empty Var");
  return *a.tape();
}

void same_shape(Var a, Var b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(where) + ": shape mismatch " + detail::shape_str(a.rows(), a.cols()) +
                     " vs " + detail::shape_str(b.rows(), b.cols()));
  }
}

void row_operand(Var x, Var row, const char* where) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError(std::string(where) + ": expected a 1x" + std::to_string(x.cols()) + " row");
  }
}

}  // namespace

Var detach(Var x) { return tape_of(x).constant(x.value()); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  Matrix out = mmprompt::matmul(a.value(), b.value());
  const Var parents[] = {a, b};
  return t.record(std::move(out), parents, [a, b](Tape& tp, const Matrix& g) {
    if (a.requires_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var x) {
  Tape& t = tape_of(x);
  const Var parents[] = {x};
  return t.record(x.value().transpose(), parents,
                  [x](Tape& tp, const Matrix& g) { tp.accumulate(x, g.transpose()); });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value() + b.value(), parents, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value() - b.value(), parents, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (b.requires_grad()) tp.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value().cwiseProduct(b.value()), parents, [a, b](Tape& tp, const Matrix& g) {
    if (a.requires_grad()) tp.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) tp.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var x, double s) {
  const Var parents[] = {x};
  return tape_of(x).record(x.value() * s, parents,
                           [x, s](Tape& tp, const Matrix& g) { tp.accumulate(x, g * s); });
}

Var add_scalar(Var x, double s) {
  const Var parents[] = {x};
  return tape_of(x).record((x.value().array() + s).matrix(), parents,
                           [x](Tape& tp, const Matrix& g) { tp.accumulate(x, g); });
}

Var add_row(Var x, Var row) {
  row_operand(x, row, "add_row");
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  const Var parents[] = {x, row};
  return tape_of(x).record(std::move(out), parents, [x, row](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (row.requires_grad()) tp.accumulate(row, g.colwise().sum());
  });
}

Var mul_row(Var x, Var row) {
  row_operand(x, row, "mul_row");
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  const Var parents[] = {x, row};
  return tape_of(x).record(std::move(out), parents, [x, row](Tape& tp, const Matrix& g) {
    if (x.requires_grad()) {
      tp.accumulate(x, (g.array().rowwise() * row.value().row(0).array()).matrix());
    }
    if (row.requires_grad()) tp.accumulate(row, g.cwiseProduct(x.value()).colwise().sum());
  });
}

Var broadcast_rows(Var row, Index n) {
  if (row.rows() != 1) throw ShapeError("broadcast_rows: expected a single row");
  Matrix out = row.value().replicate(n, 1);
  const Var parents[] = {row};
  return tape_of(row).record(std::move(out), parents,
                             [row](Tape& tp, const Matrix& g) { tp.accumulate(row, g.colwise().sum()); });
}

Var gelu(Var x) {
  const Var parents[] = {x};
  return tape_of(x).record(mmprompt::gelu(x.value()), parents, [x](Tape& tp, const Matrix& g) {
    Matrix d = x.value().unaryExpr([](double v) { return gelu_grad_scalar(v); });
    tp.accumulate(x, g.cwiseProduct(d));
  });
}

Var tanh(Var x) {
  Matrix out = x.value().array().tanh().matrix();
  const Var parents[] = {x};
  return tape_of(x).record(out, parents, [x, y = out](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Var sigmoid(Var x) {
  Matrix out = x.value().unaryExpr([](double v) { return logistic(v); });
  const Var parents[] = {x};
  return tape_of(x).record(out, parents, [x, y = out](Tape& tp, const Matrix& g) {
    tp.accumulate(x, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

namespace {

Var softmax_impl(Var x, const Mask* visible) {
  const Matrix& v = x.value();
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < v.cols(); ++c) {
      if (visible == nullptr || (*visible)(r, c)) m = std::max(m, v(r, c));
    }
    if (!std::isfinite(m)) throw ShapeError("masked_softmax_rows: row with no visible entry");
    double total = 0.0;
    for (Index c = 0; c < v.cols(); ++c) {
      if (visible == nullptr || (*visible)(r, c)) {
        out(r, c) = std::exp(v(r, c) - m);
        total += out(r, c);
      }
    }
    out.row(r) /= total;
  }
  const Var parents[] = {x};
  return tape_of(x).record(out, parents, [x, y = out](Tape& tp, const Matrix& g) {
    Matrix gy = g.cwiseProduct(y);
    const Eigen::VectorXd dots = gy.rowwise().sum();
    Matrix dx = gy - (y.array().colwise() * dots.array()).matrix();
    tp.accumulate(x, dx);
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, nullptr); }

Var masked_softmax_rows(Var x, const Mask& visible) {
  if (visible.rows() != x.rows() || visible.cols() != x.cols()) {
    throw ShapeError("masked_softmax_rows: mask shape differs from input");
  }
  return softmax_impl(x, &visible);
}

Var layernorm(Var x, Var gain, Var bias) {
  row_operand(x, gain, "layernorm");
  row_operand(x, bias, "layernorm");
  const Matrix& v = x.value();
  const Index n = v.rows();
  const auto d = static_cast<double>(v.cols());
  Matrix xhat(n, v.cols());
  Eigen::VectorXd inv_std(n);
  for (Index r = 0; r < n; ++r) {
    const double mu = v.row(r).sum() / d;
    const auto centered = (v.row(r).array() - mu).eval();
    const double var = centered.square().sum() / d;
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (centered * inv_std(r)).matrix();
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const Var parents[] = {x, gain, bias};
  return tape_of(x).record(std::move(out), parents,
                           [x, gain, bias, xhat, inv_std, d](Tape& tp, const Matrix& g) {
    if (gain.requires_grad()) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) tp.accumulate(bias, g.colwise().sum());
    if (!x.requires_grad()) return;
    Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
    Matrix dx(dxhat.rows(), dxhat.cols());
    for (Index r = 0; r < dxhat.rows(); ++r) {
      const double m1 = dxhat.row(r).sum() / d;
      const double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
      dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
    }
    tp.accumulate(x, dx);
  });
}

Var slice_rows(Var x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
  const Var parents[] = {x};
  return tape_of(x).record(x.value().middleRows(start, count), parents,
                           [x, start, count](Tape& tp, const Matrix& g) {
    if (!x.requires_grad()) return;
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    full.middleRows(start, count) = g;
    tp.accumulate(x, full);
  });
}

Var slice_cols(Var x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  const Var parents[] = {x};
  return tape_of(x).record(x.value().middleCols(start, count), parents,
                           [x, start, count](Tape& tp, const Matrix& g) {
    if (!x.requires_grad()) return;
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    full.middleCols(start, count) = g;
    tp.accumulate(x, full);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape_of(parts.front()).record(std::move(out), parts, [saved](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (const Var& p : saved) {
      if (p.requires_grad()) tp.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape_of(parts.front()).record(std::move(out), parts, [saved](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (const Var& p : saved) {
      if (p.requires_grad()) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var mean_rows(Var x) {
  if (x.rows() == 0) throw ShapeError("mean_rows: empty input");
  const Var parents[] = {x};
  const Index n = x.rows();
  return tape_of(x).record(mmprompt::reduce_mean(x.value(), 0), parents, [x, n](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.replicate(n, 1) / static_cast<double>(n));
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Var parents[] = {x};
  return tape_of(x).record(std::move(out), parents, [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var gather_windows(Var x, std::span<const Index> offsets, Index width) {
  if (static_cast<Index>(offsets.size()) != x.rows()) {
    throw ShapeError("gather_windows: need one offset per row");
  }
  Matrix out(x.rows(), width);
  for (Index r = 0; r < x.rows(); ++r) {
    const Index o = offsets[static_cast<std::size_t>(r)];
    if (o < 0 || o + width > x.cols()) throw ShapeError("gather_windows: window out of bounds");
    out.row(r) = x.value().row(r).segment(o, width);
  }
  std::vector<Index> offs(offsets.begin(), offsets.end());
  const Var parents[] = {x};
  return tape_of(x).record(std::move(out), parents, [x, offs, width](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    for (Index r = 0; r < g.rows(); ++r) full.row(r).segment(offs[static_cast<std::size_t>(r)], width) += g.row(r);
    tp.accumulate(x, full);
  });
}

Var scatter_add_windows(Var base, Var values, std::span<const Index> rows, std::span<const Index> offsets) {
  const auto k = static_cast<std::size_t>(values.rows());
  if (rows.size() != k || offsets.size() != k) {
    throw ShapeError("scatter_add_windows: need one row and offset per value row");
  }
  const Index width = values.cols();
  Matrix out = base.value();
  for (std::size_t i = 0; i < k; ++i) {
    if (rows[i] < 0 || rows[i] >= out.rows() || offsets[i] < 0 || offsets[i] + width > out.cols()) {
      throw ShapeError("scatter_add_windows: window out of bounds");
    }
    out.row(rows[i]).segment(offsets[i], width) += values.value().row(static_cast<Index>(i));
  }
  std::vector<Index> rs(rows.begin(), rows.end());
  std::vector<Index> os(offsets.begin(), offsets.end());
  const Var parents[] = {base, values};
  return tape_of(base).record(std::move(out), parents, [base, values, rs, os](Tape& tp, const Matrix& g) {
    tp.accumulate(base, g);
    if (!values.requires_grad()) return;
    Matrix gv(values.rows(), values.cols());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      gv.row(static_cast<Index>(i)) = g.row(rs[i]).segment(os[i], values.cols());
    }
    tp.accumulate(values, gv);
  });
}

Var embed_cols(Var x, Index total, Index offset) {
  if (offset < 0 || offset + x.cols() > total) throw ShapeError("embed_cols: window out of bounds");
  Matrix out = Matrix::Zero(x.rows(), total);
  out.middleCols(offset, x.cols()) = x.value();
  const Var parents[] = {x};
  const Index w = x.cols();
  return tape_of(x).record(std::move(out), parents, [x, offset, w](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.middleCols(offset, w));
  });
}

Var rmse_loss(Var preds, std::span<const double> labels) {
  if (preds.cols() != 1 || static_cast<std::size_t>(preds.rows()) != labels.size() || labels.empty()) {
    throw ShapeError("rmse_loss: preds must be N x 1 with N labels, N >= 1");
  }
  const Index n = preds.rows();
  Matrix diff(n, 1);
  for (Index i = 0; i < n; ++i) diff(i, 0) = preds.value()(i, 0) - labels[static_cast<std::size_t>(i)];
  Matrix out(1, 1);
  out(0, 0) = std::sqrt(diff.squaredNorm() / static_cast<double>(n));
  const double loss = out(0, 0);
  const Var parents[] = {preds};
  return tape_of(preds).record(std::move(out), parents, [preds, diff, loss, n](Tape& tp, const Matrix& g) {
    if (loss == 0.0) {
      tp.accumulate(preds, Matrix::Zero(n, 1));
      return;
    }
    tp.accumulate(preds, diff * (g(0, 0) / (static_cast<double>(n) * loss)));
  });
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  if (logits.cols() != 1 || static_cast<std::size_t>(logits.rows()) != labels.size() || labels.empty()) {
    throw ShapeError("bce_with_logits: logits must be N x 1 with N labels, N >= 1");
  }
  const Index n = logits.rows();
  double total = 0.0;
  Matrix dz(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double z = logits.value()(i, 0);
    const double y = labels[static_cast<std::size_t>(i)];
    // softplus(z) - y z == -[y log s(z) + (1 - y) log(1 - s(z))]
    total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    dz(i, 0) = (logistic(z) - y) / static_cast<double>(n);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  const Var parents[] = {logits};
  return tape_of(logits).record(std::move(out), parents,
                                [logits, dz](Tape& tp, const Matrix& g) { tp.accumulate(logits, dz * g(0, 0)); });
}

}  // namespace mmprompt
