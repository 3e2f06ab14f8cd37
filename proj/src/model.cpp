#include "mmprompt/model.hpp"

#include <algorithm>

#include "mmprompt/rng.hpp"

namespace mmprompt {

void ModelConfig::validate() const {
  backbone.validate();
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  if (prompt_depth < 1 || prompt_depth > backbone.n_layers) {
    throw ConfigError("prompt_depth must be in [1, n_layers]");
  }
  for (const ModalityEncoderConfig& e : encoders) {
    if (e.d_m >= backbone.d_t) {
      throw ConfigError("encoder '" + e.modality + "': d_m must be smaller than d_t");
    }
    if (e.d_m < 2) throw ConfigError("encoder '" + e.modality + "': d_m must be >= 2");
  }
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    for (std::size_t j = i + 1; j < encoders.size(); ++j) {
      if (encoders[i].modality == encoders[j].modality) throw ConfigError("duplicate encoder modality");
    }
  }
}

namespace {

ModelConfig checked(ModelConfig c) {
  c.validate();
  for (ModalityEncoderConfig& e : c.encoders) e.depth = c.prompt_depth;
  return c;
}

Matrix head_init(const ModelConfig& c, std::uint64_t seed) {
  return Rng(seed).split(streams::kHead).normal_matrix(c.backbone.d_t, 1, c.head_init_std);
}

}  // namespace

PromptedModel::PromptedModel(const ModelConfig& config, std::uint64_t seed)
    : config_(checked(config)),
      backbone_(config_.backbone),
      head_(config_.backbone.d_t, head_init(config_, seed), 0.0) {
  backbone_.freeze();
  Rng prompt_rng = Rng(seed).split(streams::kPrompts);
  for (int k = 0; k < config_.prompt_depth; ++k) {
    const int layer = first_prompted_layer() + k;
    prompts_.push_back(&prompt_params_.add(
        "prompt.layer" + std::to_string(layer),
        prompt_rng.normal_matrix(config_.prompt_length, config_.backbone.d_t, config_.prompt_init_std)));
  }
  const Rng enc_root = Rng(seed).split(streams::kEncoders);
  Rng offsets = Rng(seed).split(streams::kDirectAdd);
  for (std::size_t i = 0; i < config_.encoders.size(); ++i) {
    const ModalityEncoderConfig& e = config_.encoders[i];
    encoders_[e.modality] = make_encoder(e, enc_root.split(i).next_u64());
    direct_offsets_[e.modality] =
        static_cast<Index>(offsets.below(static_cast<std::uint64_t>(config_.backbone.d_t - e.d_m + 1)));
  }
}

const ModalityEncoder& PromptedModel::encoder(const std::string& modality) const {
  const auto it = encoders_.find(modality);
  if (it == encoders_.end()) throw ConfigError("no encoder for modality '" + modality + "'");
  return *it->second;
}

std::vector<Parameter*> PromptedModel::parameters() const {
  std::vector<Parameter*> out = backbone_.parameters();
  for (Parameter* p : prompts_) out.push_back(p);
  for (const auto& [_, enc] : encoders_) {
    for (Parameter* p : enc->parameters()) out.push_back(p);
  }
  for (Parameter* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> PromptedModel::trainable_parameters() const {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

Matrix PromptedModel::frozen_prefix(const Sample& sample) const {
  Tape tape;
  Var h = tape.constant(backbone_.embed(sample.tokens, sample.text_embedding ? &*sample.text_embedding : nullptr));
  for (int i = 0; i < first_prompted_layer(); ++i) h = backbone_.layer(tape, i, h);
  return h.value();
}

namespace {

// Adds a zero-padded modality state onto the text rows it lines up with.
Var direct_add(Var h, Var h_m, Index offset) {
  const Index l_t = h.rows();
  Var padded = embed_cols(h_m, h.cols(), offset);
  if (h_m.rows() >= l_t) {
    padded = slice_rows(padded, 0, l_t);
  } else {
    Tape& tape = *h.tape();
    const Var parts[] = {padded, tape.constant(Matrix::Zero(l_t - h_m.rows(), h.cols()))};
    padded = concat_rows(parts);
  }
  return add(h, padded);
}

}  // namespace

Var PromptedModel::forward(Tape& tape, const Sample& sample, const FusionOptions& options, const Matrix* cached_prefix,
                           std::vector<LayerTrace>* trace) const {
  Var h = tape.constant(cached_prefix != nullptr ? *cached_prefix : frozen_prefix(sample));

  struct Encoded {
    std::string name;
    bool aligned;
    std::vector<Var> states;
  };
  std::vector<Encoded> encoded;
  for (const auto& [name, enc] : encoders_) {
    if (std::find(options.active.begin(), options.active.end(), name) == options.active.end()) continue;
    const auto it = sample.features.find(name);
    if (it == sample.features.end() || !it->second) continue;
    const bool zero = std::find(options.zeroed.begin(), options.zeroed.end(), name) != options.zeroed.end();
    const Matrix& feats = *it->second;
    const auto al = sample.aligned.find(name);
    const bool aligned = al != sample.aligned.end() ? al->second : enc->config().aligned;
    if (aligned && feats.rows() != h.rows()) {
      throw ShapeError("modality '" + name + "' is flagged aligned but has " + std::to_string(feats.rows()) +
                       " rows for " + std::to_string(h.rows()) + " tokens");
    }
    encoded.push_back({name, aligned, enc->encode(tape, zero ? Matrix::Zero(feats.rows(), feats.cols()) : feats)});
  }

  const int first = first_prompted_layer();
  auto hook = [&](int layer, Var& states) -> Var {
    const auto k = static_cast<std::size_t>(layer - first);
    Var p_tilde = tape.parameter(*prompts_[k]);
    LayerTrace* lt = nullptr;
    if (trace != nullptr) {
      trace->push_back({});
      lt = &trace->back();
      lt->layer = layer;
      lt->h_t = states.value();
    }
    Var prompt = p_tilde;
    if (options.use_pafis) {
      std::vector<ModalityVar> mods;
      for (const Encoded& e : encoded) mods.push_back({e.name, e.states[k], e.aligned});
      prompt = assemble_prompt(p_tilde, states, mods, lt != nullptr ? &lt->selections : nullptr);
    } else {
      for (const Encoded& e : encoded) states = direct_add(states, e.states[k], direct_offsets_.at(e.name));
    }
    if (lt != nullptr) {
      for (const Encoded& e : encoded) {
        lt->h_m[e.name] = e.states[k].value();
        lt->modality_order.push_back(e.name);
      }
      lt->prompt = prompt.value();
    }
    return prompt;
  };
  Backbone::Trace bt;
  Var final_states = backbone_.forward(tape, h, first, hook, trace != nullptr ? &bt : nullptr);
  if (trace != nullptr) {
    for (std::size_t i = 0; i < trace->size(); ++i) (*trace)[i].attention_len = bt.attention_len[i];
  }
  return head_.apply(tape, final_states);
}

double PromptedModel::predict(const Sample& sample, const FusionOptions& options, const Matrix* cached_prefix) const {
  Tape tape;
  return forward(tape, sample, options, cached_prefix).value()(0, 0);
}

std::vector<std::string> trainable_census(const PromptedModel& model) {
  std::vector<std::string> names;
  for (const Parameter* p : model.trainable_parameters()) names.push_back(p->name);
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace mmprompt
