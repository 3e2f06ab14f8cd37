#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmprompt/autograd.hpp"

namespace mmprompt {

struct BackboneConfig {
  int n_layers = 6;
  int d_t = 64;
  int n_heads = 4;
  int vocab = 256;
  int max_len = 64;
  std::uint64_t seed = 0;
  /// Weight scale in units of 1/sqrt(fan_in).
  double weight_gain = 1.0;
  double embedding_std = 0.02;

  void validate() const;
};

/// Frozen decoder-only transformer (pre-norm, causal) standing in for the
/// language model.
///
/// A prompted layer receives l_p prompt rows that are prepended as key/value
/// context: every text query sees all prompt rows plus the text rows up to
/// itself, so attention runs over l_p + l_t keys. Only the l_t text rows are
/// emitted; the next prompted layer gets a freshly assembled prompt.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const noexcept { return config_; }
  std::vector<Parameter*> parameters() const { return params_.all(); }

  void freeze();
  /// SHA-256 over names, shapes and raw bytes of every backbone parameter.
  std::string checksum() const;

  /// Token + position embeddings, plus optional soft embeddings (l_t x d_t)
  /// supplied with the sample. Value-level: the embeddings are frozen.
  Matrix embed(std::span<const int> tokens, const Matrix* soft_embeddings = nullptr) const;

  /// One transformer layer. `attention_len` receives the number of keys.
  Var layer(Tape& tape, int index, Var h, const Var* prompt = nullptr, Index* attention_len = nullptr) const;

  struct Trace {
    std::vector<Matrix> h_t;             ///< input to each layer, l_t x d_t
    std::vector<Index> attention_len;    ///< keys per layer
    Matrix final_states;                 ///< last layer output after the final norm
  };

  /// Called before each layer from `first_layer` on. May replace `h` (direct
  /// addition) and returns the prompt for the layer, or an invalid Var.
  using LayerHook = std::function<Var(int layer, Var& h)>;

  Var forward(Tape& tape, Var h, int first_layer, const LayerHook& hook, Trace* trace = nullptr) const;

  /// Whole pass with fixed prompts keyed by layer index.
  Trace run(std::span<const int> tokens, const Matrix* soft_embeddings,
            const std::map<int, Matrix>& prompts = {}) const;

 private:
  struct Layer {
    Parameter* ln1_g;
    Parameter* ln1_b;
    Parameter* wq;
    Parameter* wk;
    Parameter* wv;
    Parameter* wo;
    Parameter* ln2_g;
    Parameter* ln2_b;
    Parameter* w1;
    Parameter* b1;
    Parameter* w2;
    Parameter* b2;
  };

  BackboneConfig config_;
  ParameterSet params_;
  Parameter* tok_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  std::vector<Layer> layers_;
  Parameter* lnf_g_ = nullptr;
  Parameter* lnf_b_ = nullptr;
};

/// Affine map from the last row of the final states to one output.
class PredictionHead {
 public:
  PredictionHead(int d_t, Matrix weight, double bias);

  std::vector<Parameter*> parameters() const { return params_.all(); }
  Parameter& weight() { return *w_; }
  Parameter& bias() { return *b_; }

  Var apply(Tape& tape, Var final_states) const;
  double apply(const Matrix& final_states) const;

 private:
  ParameterSet params_;
  Parameter* w_;
  Parameter* b_;
};

std::string sha256_hex(std::span<const unsigned char> bytes);

/// Digest of a parameter list in the given order.
std::string parameter_checksum(std::span<Parameter* const> params);

}  // namespace mmprompt
