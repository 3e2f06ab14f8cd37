#include "mmprompt/encoder.hpp"

#include <cmath>

#include "mmprompt/rng.hpp"

namespace mmprompt {

std::string_view encoder_kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Transformer: return "transformer";
    case EncoderKind::RecurrentGated: return "recurrent-gated";
    case EncoderKind::RecurrentLstm: return "recurrent-lstm";
    case EncoderKind::Convolution: return "convolution";
  }
  return "transformer";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "transformer") return EncoderKind::Transformer;
  if (name == "recurrent-gated" || name == "gru") return EncoderKind::RecurrentGated;
  if (name == "recurrent-lstm" || name == "lstm") return EncoderKind::RecurrentLstm;
  if (name == "convolution") return EncoderKind::Convolution;
  throw ConfigError("unknown encoder kind '" + std::string(name) + "'");
}

ModalityEncoder::ModalityEncoder(ModalityEncoderConfig config) : config_(std::move(config)) {
  if (config_.modality.empty()) throw ConfigError("encoder: modality name is empty");
  if (config_.d_m < 2 || config_.d_feat < 1 || config_.depth < 1) throw ConfigError("encoder: invalid dimensions");
}

std::string ModalityEncoder::prefix(int block) const {
  return "encoder." + config_.modality + ".block" + std::to_string(block) + ".";
}

std::vector<Var> ModalityEncoder::encode(Tape& tape, const Matrix& features) const {
  if (features.rows() < 1) throw ShapeError("encoder " + config_.modality + ": empty sequence");
  if (features.cols() != config_.d_feat) {
    throw ShapeError("encoder " + config_.modality + ": expected " + std::to_string(config_.d_feat) +
                     " feature channels, got " + std::to_string(features.cols()));
  }
  ensure_finite(features, "encoder input");
  Var x = add_row(matmul(tape.constant(features), tape.parameter(*in_w_)), tape.parameter(*in_b_));
  std::vector<Var> taps;
  taps.reserve(static_cast<std::size_t>(config_.depth));
  for (int i = 0; i < config_.depth; ++i) {
    x = block(tape, i, x);
    taps.push_back(x);
  }
  return taps;
}

namespace {

Matrix input_projection(const ModalityEncoderConfig& c, Rng& rng) {
  if (c.d_feat == c.d_m) return Matrix::Identity(c.d_m, c.d_m);
  return rng.normal_matrix(c.d_feat, c.d_m, 1.0 / std::sqrt(static_cast<double>(c.d_feat)));
}

// Pre-norm bidirectional transformer block.
class TransformerEncoder final : public ModalityEncoder {
 public:
  TransformerEncoder(ModalityEncoderConfig config, Rng rng) : ModalityEncoder(std::move(config)) {
    const int d = config_.d_m;
    if (config_.n_heads < 1 || d % config_.n_heads != 0) throw ConfigError("encoder: d_m must be divisible by n_heads");
    in_w_ = &params_.add("encoder." + config_.modality + ".input.weight", input_projection(config_, rng));
    in_b_ = &params_.add("encoder." + config_.modality + ".input.bias", Matrix::Zero(1, d));
    const double s = config_.init_std;
    for (int i = 0; i < config_.depth; ++i) {
      const std::string p = prefix(i);
      Block b{};
      b.ln1_g = &params_.add(p + "ln1.gain", Matrix::Ones(1, d));
      b.ln1_b = &params_.add(p + "ln1.bias", Matrix::Zero(1, d));
      b.wq = &params_.add(p + "attn.wq", rng.normal_matrix(d, d, s));
      b.wk = &params_.add(p + "attn.wk", rng.normal_matrix(d, d, s));
      b.wv = &params_.add(p + "attn.wv", rng.normal_matrix(d, d, s));
      b.wo = &params_.add(p + "attn.wo", rng.normal_matrix(d, d, s));
      b.ln2_g = &params_.add(p + "ln2.gain", Matrix::Ones(1, d));
      b.ln2_b = &params_.add(p + "ln2.bias", Matrix::Zero(1, d));
      b.w1 = &params_.add(p + "mlp.w1", rng.normal_matrix(d, 2 * d, s));
      b.b1 = &params_.add(p + "mlp.b1", Matrix::Zero(1, 2 * d));
      b.w2 = &params_.add(p + "mlp.w2", rng.normal_matrix(2 * d, d, s));
      b.b2 = &params_.add(p + "mlp.b2", Matrix::Zero(1, d));
      blocks_.push_back(b);
    }
  }

 protected:
  Var block(Tape& tape, int index, Var x) const override {
    const Block& b = blocks_[static_cast<std::size_t>(index)];
    const Index d = config_.d_m;
    const Index n_heads = config_.n_heads;
    const Index dh = d / n_heads;
    Var n1 = layernorm(x, tape.parameter(*b.ln1_g), tape.parameter(*b.ln1_b));
    Var q = matmul(n1, tape.parameter(*b.wq));
    Var k = matmul(n1, tape.parameter(*b.wk));
    Var v = matmul(n1, tape.parameter(*b.wv));
    std::vector<Var> heads;
    for (Index h = 0; h < n_heads; ++h) {
      Var att = softmax_rows(scale(matmul(slice_cols(q, h * dh, dh), transpose(slice_cols(k, h * dh, dh))),
                                   1.0 / std::sqrt(static_cast<double>(dh))));
      heads.push_back(matmul(att, slice_cols(v, h * dh, dh)));
    }
    Var h1 = add(x, matmul(concat_cols(heads), tape.parameter(*b.wo)));
    Var n2 = layernorm(h1, tape.parameter(*b.ln2_g), tape.parameter(*b.ln2_b));
    Var hidden = gelu(add_row(matmul(n2, tape.parameter(*b.w1)), tape.parameter(*b.b1)));
    return add(h1, add_row(matmul(hidden, tape.parameter(*b.w2)), tape.parameter(*b.b2)));
  }

 private:
  struct Block {
    Parameter *ln1_g, *ln1_b, *wq, *wk, *wv, *wo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  std::vector<Block> blocks_;
};

// Residual recurrent block: x + W_out * rnn(x). GRU or LSTM cell.
class RecurrentEncoder final : public ModalityEncoder {
 public:
  RecurrentEncoder(ModalityEncoderConfig config, Rng rng, bool lstm)
      : ModalityEncoder(std::move(config)), lstm_(lstm) {
    const int d = config_.d_m;
    const int gates = lstm_ ? 4 : 3;
    in_w_ = &params_.add("encoder." + config_.modality + ".input.weight", input_projection(config_, rng));
    in_b_ = &params_.add("encoder." + config_.modality + ".input.bias", Matrix::Zero(1, d));
    const double s = config_.init_std;
    for (int i = 0; i < config_.depth; ++i) {
      const std::string p = prefix(i);
      Block b{};
      b.wx = &params_.add(p + "cell.wx", rng.normal_matrix(d, gates * d, s));
      b.wh = &params_.add(p + "cell.wh", rng.normal_matrix(d, gates * d, s));
      b.b = &params_.add(p + "cell.bias", Matrix::Zero(1, gates * d));
      b.wout = &params_.add(p + "out.weight", rng.normal_matrix(d, d, s));
      blocks_.push_back(b);
    }
  }

 protected:
  Var block(Tape& tape, int index, Var x) const override {
    const Block& b = blocks_[static_cast<std::size_t>(index)];
    const Index d = config_.d_m;
    Var xw = add_row(matmul(x, tape.parameter(*b.wx)), tape.parameter(*b.b));
    Var wh = tape.parameter(*b.wh);
    Var h = tape.constant(Matrix::Zero(1, d));
    Var c = h;
    std::vector<Var> outs;
    for (Index t = 0; t < x.rows(); ++t) {
      if (lstm_) {
        Var pre = add(slice_rows(xw, t, 1), matmul(h, wh));
        Var i_g = sigmoid(slice_cols(pre, 0, d));
        Var f_g = sigmoid(slice_cols(pre, d, d));
        Var g_g = tanh(slice_cols(pre, 2 * d, d));
        Var o_g = sigmoid(slice_cols(pre, 3 * d, d));
        c = add(mul(f_g, c), mul(i_g, g_g));
        h = mul(o_g, tanh(c));
      } else {
        // GRU with the reset gate applied to the recurrent contribution only.
        Var xr = slice_rows(xw, t, 1);
        Var hw = matmul(h, wh);
        Var z = sigmoid(add(slice_cols(xr, 0, d), slice_cols(hw, 0, d)));
        Var r = sigmoid(add(slice_cols(xr, d, d), slice_cols(hw, d, d)));
        Var n = tanh(add(slice_cols(xr, 2 * d, d), mul(r, slice_cols(hw, 2 * d, d))));
        // h = (1 - z) * n + z * h
        h = add(n, mul(z, sub(h, n)));
      }
      outs.push_back(h);
    }
    return add(x, matmul(concat_rows(outs), tape.parameter(*b.wout)));
  }

 private:
  struct Block {
    Parameter *wx, *wh, *b, *wout;
  };
  bool lstm_;
  std::vector<Block> blocks_;
};

// Residual depthwise-separable 1-D convolution: x + pointwise(gelu(depthwise_k3(x))).
class ConvolutionEncoder final : public ModalityEncoder {
 public:
  ConvolutionEncoder(ModalityEncoderConfig config, Rng rng) : ModalityEncoder(std::move(config)) {
    const int d = config_.d_m;
    in_w_ = &params_.add("encoder." + config_.modality + ".input.weight", input_projection(config_, rng));
    in_b_ = &params_.add("encoder." + config_.modality + ".input.bias", Matrix::Zero(1, d));
    const double s = config_.init_std;
    for (int i = 0; i < config_.depth; ++i) {
      const std::string p = prefix(i);
      Block b{};
      for (int k = 0; k < kKernel; ++k) {
        b.depthwise[k] = &params_.add(p + "depthwise.tap" + std::to_string(k), rng.normal_matrix(1, d, s));
      }
      b.db = &params_.add(p + "depthwise.bias", Matrix::Zero(1, d));
      b.pw = &params_.add(p + "pointwise.weight", rng.normal_matrix(d, d, s));
      b.pb = &params_.add(p + "pointwise.bias", Matrix::Zero(1, d));
      blocks_.push_back(b);
    }
  }

 protected:
  Var block(Tape& tape, int index, Var x) const override {
    const Block& b = blocks_[static_cast<std::size_t>(index)];
    const Index l = x.rows();
    Var acc;
    for (int k = 0; k < kKernel; ++k) {
      // Row t of shift * x is x[t + k - 1] (zero padded).
      Matrix shift = Matrix::Zero(l, l);
      for (Index t = 0; t < l; ++t) {
        const Index src = t + k - 1;
        if (src >= 0 && src < l) shift(t, src) = 1.0;
      }
      Var tap = mul_row(matmul(tape.constant(std::move(shift)), x), tape.parameter(*b.depthwise[k]));
      acc = k == 0 ? tap : add(acc, tap);
    }
    Var hidden = gelu(add_row(acc, tape.parameter(*b.db)));
    return add(x, add_row(matmul(hidden, tape.parameter(*b.pw)), tape.parameter(*b.pb)));
  }

 private:
  static constexpr int kKernel = 3;
  struct Block {
    Parameter* depthwise[kKernel];
    Parameter *db, *pw, *pb;
  };
  std::vector<Block> blocks_;
};

}  // namespace

std::unique_ptr<ModalityEncoder> make_encoder(const ModalityEncoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  switch (config.kind) {
    case EncoderKind::Transformer: return std::make_unique<TransformerEncoder>(config, rng);
    case EncoderKind::RecurrentGated: return std::make_unique<RecurrentEncoder>(config, rng, false);
    case EncoderKind::RecurrentLstm: return std::make_unique<RecurrentEncoder>(config, rng, true);
    case EncoderKind::Convolution: return std::make_unique<ConvolutionEncoder>(config, rng);
  }
  throw ConfigError("unknown encoder kind");
}

}  // namespace mmprompt
