#include "mmprompt/backbone.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <iomanip>
#include <memory>
#include <sstream>

#include "mmprompt/rng.hpp"

namespace mmprompt {

void BackboneConfig::validate() const {
  if (n_layers < 1) throw ConfigError("backbone.n_layers must be >= 1");
  if (d_t < 2) throw ConfigError("backbone.d_t must be >= 2");
  if (n_heads < 1 || d_t % n_heads != 0) throw ConfigError("backbone.d_t must be divisible by backbone.n_heads");
  if (vocab < 1) throw ConfigError("backbone.vocab must be >= 1");
  if (max_len < 1) throw ConfigError("backbone.max_len must be >= 1");
  if (!(weight_gain >= 0.0) || !(embedding_std >= 0.0)) throw ConfigError("backbone init scales must be >= 0");
}

Backbone::Backbone(const BackboneConfig& config) : config_(config) {
  config_.validate();
  Rng rng = Rng(config_.seed).split(streams::kBackbone);
  const int d = config_.d_t;
  const double std_in = config_.weight_gain / std::sqrt(static_cast<double>(d));
  const double std_hidden = config_.weight_gain / std::sqrt(4.0 * d);
  tok_emb_ = &params_.add("backbone.tok_emb", rng.normal_matrix(config_.vocab, d, config_.embedding_std));
  pos_emb_ = &params_.add("backbone.pos_emb", rng.normal_matrix(config_.max_len, d, config_.embedding_std));
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string p = "backbone.layer" + std::to_string(i) + ".";
    Layer l{};
    l.ln1_g = &params_.add(p + "ln1.gain", Matrix::Ones(1, d));
    l.ln1_b = &params_.add(p + "ln1.bias", Matrix::Zero(1, d));
    l.wq = &params_.add(p + "attn.wq", rng.normal_matrix(d, d, std_in));
    l.wk = &params_.add(p + "attn.wk", rng.normal_matrix(d, d, std_in));
    l.wv = &params_.add(p + "attn.wv", rng.normal_matrix(d, d, std_in));
    l.wo = &params_.add(p + "attn.wo", rng.normal_matrix(d, d, std_in));
    l.ln2_g = &params_.add(p + "ln2.gain", Matrix::Ones(1, d));
    l.ln2_b = &params_.add(p + "ln2.bias", Matrix::Zero(1, d));
    l.w1 = &params_.add(p + "mlp.w1", rng.normal_matrix(d, 4 * d, std_in));
    l.b1 = &params_.add(p + "mlp.b1", Matrix::Zero(1, 4 * d));
    l.w2 = &params_.add(p + "mlp.w2", rng.normal_matrix(4 * d, d, std_hidden));
    l.b2 = &params_.add(p + "mlp.b2", Matrix::Zero(1, d));
    layers_.push_back(l);
  }
  lnf_g_ = &params_.add("backbone.final_ln.gain", Matrix::Ones(1, d));
  lnf_b_ = &params_.add("backbone.final_ln.bias", Matrix::Zero(1, d));
}

void Backbone::freeze() {
  for (Parameter* p : params_.all()) {
    p->trainable = false;
    p->grad.resize(0, 0);
  }
}

std::string Backbone::checksum() const { return parameter_checksum(params_.all()); }

Matrix Backbone::embed(std::span<const int> tokens, const Matrix* soft_embeddings) const {
  const auto n = static_cast<Index>(tokens.size());
  if (n < 1) throw ShapeError("backbone: empty token sequence");
  if (n > config_.max_len) {
    throw ShapeError("backbone: " + std::to_string(n) + " tokens exceed max_len " + std::to_string(config_.max_len));
  }
  Matrix h(n, config_.d_t);
  for (Index i = 0; i < n; ++i) {
    const int t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= config_.vocab) throw ShapeError("backbone: token id out of range");
    h.row(i) = tok_emb_->value.row(t) + pos_emb_->value.row(i);
  }
  if (soft_embeddings != nullptr) {
    ensure_same_shape(h, *soft_embeddings, "backbone soft embeddings");
    h += *soft_embeddings;
  }
  ensure_finite(h, "backbone embed");
  return h;
}

Var Backbone::layer(Tape& tape, int index, Var h, const Var* prompt, Index* attention_len) const {
  if (index < 0 || index >= config_.n_layers) throw ShapeError("backbone: layer index out of range");
  if (h.cols() != config_.d_t) throw ShapeError("backbone: hidden width differs from d_t");
  const Layer& L = layers_[static_cast<std::size_t>(index)];
  const Index l_t = h.rows();
  const Index l_p = prompt != nullptr ? prompt->rows() : 0;
  if (prompt != nullptr && prompt->cols() != config_.d_t) {
    throw ShapeError("backbone: prompt width " + std::to_string(prompt->cols()) + " differs from d_t " +
                     std::to_string(config_.d_t));
  }

  Var seq = h;
  if (prompt != nullptr) {
    const Var parts[] = {*prompt, h};
    seq = concat_rows(parts);
  }
  const Index n_keys = l_p + l_t;
  if (attention_len != nullptr) *attention_len = n_keys;

  Var normed = layernorm(seq, tape.parameter(*L.ln1_g), tape.parameter(*L.ln1_b));
  Var text_normed = l_p > 0 ? slice_rows(normed, l_p, l_t) : normed;
  Var q = matmul(text_normed, tape.parameter(*L.wq));
  Var k = matmul(normed, tape.parameter(*L.wk));
  Var v = matmul(normed, tape.parameter(*L.wv));

  Mask visible(l_t, n_keys);
  for (Index r = 0; r < l_t; ++r) {
    for (Index c = 0; c < n_keys; ++c) visible(r, c) = c < l_p || (c - l_p) <= r;
  }

  const Index n_heads = config_.n_heads;
  const Index dh = config_.d_t / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (Index hd = 0; hd < n_heads; ++hd) {
    Var qh = slice_cols(q, hd * dh, dh);
    Var kh = slice_cols(k, hd * dh, dh);
    Var vh = slice_cols(v, hd * dh, dh);
    Var att = masked_softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), visible);
    heads.push_back(matmul(att, vh));
  }
  Var attn = matmul(concat_cols(heads), tape.parameter(*L.wo));
  Var h1 = add(h, attn);

  Var n2 = layernorm(h1, tape.parameter(*L.ln2_g), tape.parameter(*L.ln2_b));
  Var hidden = gelu(add_row(matmul(n2, tape.parameter(*L.w1)), tape.parameter(*L.b1)));
  Var mlp = add_row(matmul(hidden, tape.parameter(*L.w2)), tape.parameter(*L.b2));
  return add(h1, mlp);
}

Var Backbone::forward(Tape& tape, Var h, int first_layer, const LayerHook& hook, Trace* trace) const {
  for (int i = first_layer; i < config_.n_layers; ++i) {
    Var prompt;
    if (hook) prompt = hook(i, h);
    if (trace != nullptr) trace->h_t.push_back(h.value());
    Index n_keys = 0;
    h = layer(tape, i, h, prompt.valid() ? &prompt : nullptr, &n_keys);
    if (trace != nullptr) trace->attention_len.push_back(n_keys);
  }
  h = layernorm(h, tape.parameter(*lnf_g_), tape.parameter(*lnf_b_));
  if (trace != nullptr) trace->final_states = h.value();
  return h;
}

Backbone::Trace Backbone::run(std::span<const int> tokens, const Matrix* soft_embeddings,
                              const std::map<int, Matrix>& prompts) const {
  for (const auto& [layer_index, p] : prompts) {
    if (layer_index < 0 || layer_index >= config_.n_layers) throw ShapeError("backbone: prompt for unknown layer");
  }
  Tape tape;
  Trace trace;
  Var h = tape.constant(embed(tokens, soft_embeddings));
  forward(
      tape, h, 0,
      [&](int i, Var&) {
        const auto it = prompts.find(i);
        return it == prompts.end() ? Var{} : tape.constant(it->second);
      },
      &trace);
  return trace;
}

PredictionHead::PredictionHead(int d_t, Matrix weight, double bias) {
  if (weight.rows() != d_t || weight.cols() != 1) throw ShapeError("head: weight must be d_t x 1");
  w_ = &params_.add("head.weight", std::move(weight));
  b_ = &params_.add("head.bias", Matrix::Constant(1, 1, bias));
}

Var PredictionHead::apply(Tape& tape, Var final_states) const {
  if (final_states.rows() < 1) throw ShapeError("head: empty final states");
  Var last = slice_rows(final_states, final_states.rows() - 1, 1);
  return add(matmul(last, tape.parameter(*w_)), tape.parameter(*b_));
}

double PredictionHead::apply(const Matrix& final_states) const {
  if (final_states.rows() < 1) throw ShapeError("head: empty final states");
  return final_states.row(final_states.rows() - 1).dot(w_->value.col(0)) + b_->value(0, 0);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

std::string parameter_checksum(std::span<Parameter* const> params) {
  std::vector<unsigned char> buf;
  auto append = [&buf](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  };
  for (const Parameter* p : params) {
    append(p->name.data(), p->name.size());
    const std::int64_t shape[] = {p->value.rows(), p->value.cols()};
    append(shape, sizeof(shape));
    append(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return sha256_hex(buf);
}

}  // namespace mmprompt
