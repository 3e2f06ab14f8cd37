#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmprompt/autograd.hpp"
#include "mmprompt/config.hpp"
#include "mmprompt/rng.hpp"

namespace mmprompt::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  return rng.normal_matrix(rows, cols, scale);
}

/// Reduces an op output to a scalar with fixed random weights so every output
/// entry contributes to the checked derivative.
inline Var weighted_sum(Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Var w = y.tape()->constant(rng.normal_matrix(y.rows(), y.cols()));
  return sum(mul(y, w));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  int directions = 0;
};

/// Compares the tape gradient of f with central differences along random
/// directions in the joint input space. f must build a 1x1 Var from the
/// leaves it is handed.
inline GradCheckResult gradcheck(const std::function<Var(Tape&, std::vector<Var>&)>& f,
                                 const std::vector<Matrix>& inputs, int directions = 20, std::uint64_t seed = 7,
                                 double eps = 1e-6) {
  std::vector<Matrix> grads;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& x : inputs) leaves.push_back(tape.variable(x));
    Var loss = f(tape, leaves);
    tape.backward(loss);
    for (const Var& v : leaves) {
      const Matrix* g = tape.grad(v);
      grads.push_back(g != nullptr ? *g : Matrix::Zero(v.rows(), v.cols()));
    }
  }
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& x : xs) leaves.push_back(tape.constant(x));
    return f(tape, leaves).value()(0, 0);
  };
  Rng rng(seed);
  GradCheckResult out;
  for (int d = 0; d < directions; ++d) {
    std::vector<Matrix> dir;
    double analytic = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      dir.push_back(rng.normal_matrix(inputs[k].rows(), inputs[k].cols()));
      analytic += (grads[k].array() * dir[k].array()).sum();
    }
    std::vector<Matrix> plus = inputs, minus = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      plus[k] += eps * dir[k];
      minus[k] -= eps * dir[k];
    }
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.directions;
  }
  return out;
}

/// Same check over model parameters: `loss` builds the scalar on the tape it
/// is given, reading the parameters' current values.
inline GradCheckResult parameter_gradcheck(const std::vector<Parameter*>& params, const std::function<Var(Tape&)>& loss,
                                           int directions = 20, std::uint64_t seed = 8, double eps = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Matrix> grads, base;
  for (Parameter* p : params) {
    grads.push_back(p->grad.size() != 0 ? p->grad : Matrix::Zero(p->value.rows(), p->value.cols()));
    base.push_back(p->value);
  }
  auto eval = [&](double step, const std::vector<Matrix>& dir) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = base[k] + step * dir[k];
    Tape tape;
    return loss(tape).value()(0, 0);
  };
  Rng rng(seed);
  GradCheckResult out;
  for (int d = 0; d < directions; ++d) {
    std::vector<Matrix> dir;
    double analytic = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      dir.push_back(rng.normal_matrix(base[k].rows(), base[k].cols()));
      analytic += (grads[k].array() * dir[k].array()).sum();
    }
    const double numeric = (eval(eps, dir) - eval(-eps, dir)) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.directions;
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = base[k];
  return out;
}

/// A small experiment that trains in well under a second per epoch.
inline ExperimentConfig tiny_experiment(std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.seed = seed;
  c.backbone.n_layers = 3;
  c.backbone.d_t = 20;
  c.backbone.n_heads = 2;
  c.backbone.vocab = 32;
  c.backbone.max_len = 8;
  c.encoder_d_m = 4;
  c.prompt_length = 3;
  c.prompt_depth = 2;
  SyntheticConfig s;
  s.n_train = 24;
  s.n_val = 8;
  s.n_test = 8;
  s.l_t = 6;
  s.d_t = 20;
  s.d_m = 4;
  s.vocab = 32;
  s.modalities = {{"a", 6, true, 0.8}, {"v", 4, false, 0.6}};
  c.data.synthetic = s;
  c.train.lr = 1e-2;
  c.train.batch_size = 8;
  c.train.max_epochs = 3;
  c.train.seed = seed;
  return c;
}

}  // namespace mmprompt::testing
