#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmprompt/backbone.hpp"
#include "mmprompt/data.hpp"
#include "mmprompt/encoder.hpp"
#include "mmprompt/pafis.hpp"

namespace mmprompt {

struct ModelConfig {
  BackboneConfig backbone;
  /// One per non-text modality; depth is forced to prompt_depth.
  std::vector<ModalityEncoderConfig> encoders;
  int prompt_length = 8;
  /// Number of final backbone layers that receive prompts.
  int prompt_depth = 3;
  double prompt_init_std = 0.02;
  double head_init_std = 0.02;

  void validate() const;
};

/// Which fusion path a forward pass takes.
struct FusionOptions {
  /// true: prompts assembled by PaFIS. false: plain prompts, and each active
  /// modality state is zero-padded to d_t at a fixed random channel offset
  /// and added directly onto the text hidden states of every prompted layer.
  bool use_pafis = true;
  /// Modalities fed to the model; a modality outside this list is ignored.
  std::vector<std::string> active;
  /// Active modalities whose features are replaced by zeros (test-time dropout).
  std::vector<std::string> zeroed;
};

/// Per prompted layer, what the fusion produced. Filled on request.
struct LayerTrace {
  int layer = 0;
  Matrix h_t;
  std::map<std::string, Matrix> h_m;
  std::vector<std::string> modality_order;
  std::vector<SelectionMap> selections;
  Matrix prompt;
  Index attention_len = 0;
};

/// Frozen backbone + trainable prompts, modality encoders and head.
class PromptedModel {
 public:
  PromptedModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  Backbone& backbone() noexcept { return backbone_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  PredictionHead& head() noexcept { return head_; }
  Parameter& prompt(int k) { return *prompts_.at(static_cast<std::size_t>(k)); }
  const ModalityEncoder& encoder(const std::string& modality) const;
  bool has_encoder(const std::string& modality) const { return encoders_.count(modality) != 0; }

  int first_prompted_layer() const noexcept { return config_.backbone.n_layers - config_.prompt_depth; }
  /// Channel offset of each modality on the direct-addition path.
  const std::map<std::string, Index>& direct_offsets() const noexcept { return direct_offsets_; }

  /// Backbone first, then prompts, encoders (sorted by modality) and head.
  std::vector<Parameter*> parameters() const;
  std::vector<Parameter*> trainable_parameters() const;

  /// Text states entering the first prompted layer. Depends only on frozen
  /// weights, so training caches it per sample.
  Matrix frozen_prefix(const Sample& sample) const;

  /// Prediction (1x1: regression value or binary logit).
  Var forward(Tape& tape, const Sample& sample, const FusionOptions& options, const Matrix* cached_prefix = nullptr,
              std::vector<LayerTrace>* trace = nullptr) const;

  double predict(const Sample& sample, const FusionOptions& options, const Matrix* cached_prefix = nullptr) const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  ParameterSet prompt_params_;
  std::vector<Parameter*> prompts_;
  std::map<std::string, std::unique_ptr<ModalityEncoder>> encoders_;
  std::map<std::string, Index> direct_offsets_;
  PredictionHead head_;
};

/// Names of the trainable parameters, sorted.
std::vector<std::string> trainable_census(const PromptedModel& model);

}  // namespace mmprompt
