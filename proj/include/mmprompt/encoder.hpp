#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mmprompt/autograd.hpp"

namespace mmprompt {

enum class EncoderKind { Transformer, RecurrentGated, RecurrentLstm, Convolution };

std::string_view encoder_kind_name(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct ModalityEncoderConfig {
  std::string modality;
  EncoderKind kind = EncoderKind::Transformer;
  int d_m = 16;
  /// Raw feature width. When equal to d_m the input projection starts as identity.
  int d_feat = 16;
  bool aligned = true;
  /// Number of stacked blocks; equals the prompt depth so block i feeds prompting layer i.
  int depth = 3;
  int n_heads = 2;
  double init_std = 0.02;
};

/// Trainable context encoder for one non-text modality. Each block is
/// residual; the output of block i is tapped as the modality state for the
/// i-th prompting layer.
class ModalityEncoder {
 public:
  virtual ~ModalityEncoder() = default;

  const ModalityEncoderConfig& config() const noexcept { return config_; }
  std::vector<Parameter*> parameters() const { return params_.all(); }

  /// features: l_m x d_feat, l_m >= 1. Returns `depth` states of l_m x d_m.
  std::vector<Var> encode(Tape& tape, const Matrix& features) const;

 protected:
  explicit ModalityEncoder(ModalityEncoderConfig config);

  virtual Var block(Tape& tape, int index, Var x) const = 0;

  std::string prefix(int block) const;

  ModalityEncoderConfig config_;
  ParameterSet params_;
  Parameter* in_w_ = nullptr;
  Parameter* in_b_ = nullptr;
};

std::unique_ptr<ModalityEncoder> make_encoder(const ModalityEncoderConfig& config, std::uint64_t seed);

}  // namespace mmprompt
