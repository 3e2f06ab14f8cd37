#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmprompt/data.hpp"
#include "mmprompt/model.hpp"
#include "mmprompt/training.hpp"

namespace mmprompt {

/// Environment variable that overrides the root seed of every command.
inline constexpr const char* kSeedEnv = "MMPROMPT_SEED";

inline constexpr const char* kDefaultPromptTemplate =
    "Below is a text that describes a movie. Predict the {task} according to the text. "
    "### Text: {text}  ###{task} tendency:";

nlohmann::json to_json(const BackboneConfig& c);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModalityEncoderConfig& c);
ModalityEncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Where an experiment's data comes from: either generated on the fly or
/// three manifests on disk.
struct DataSource {
  std::optional<SyntheticConfig> synthetic;
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path test;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// Stored as metadata; the toy backbone consumes token ids, not text.
  std::string prompt_template = kDefaultPromptTemplate;
  std::filesystem::path output_dir = "runs/default";
  BackboneConfig backbone;
  /// Explicit encoders; when empty, one per data modality of kind `encoder_kind`.
  std::vector<ModalityEncoderConfig> encoders;
  EncoderKind encoder_kind = EncoderKind::Transformer;
  int encoder_d_m = 16;
  int prompt_length = 8;
  int prompt_depth = 3;
  double prompt_init_std = 0.02;
  double head_init_std = 0.02;
  TrainConfig train;
  DataSource data;

  void validate() const;
};

/// Parses and validates; unknown keys anywhere raise ConfigError. Relative
/// data paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ExperimentConfig& c);
/// Reads a config file and applies the seed override from the environment.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Seed from MMPROMPT_SEED, if set. Throws ConfigError when it is not an integer.
std::optional<std::uint64_t> seed_from_env();

struct ExperimentData {
  Dataset train;
  Dataset val;
  Dataset test;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Model config for `data`, one encoder per data modality unless listed explicitly.
ModelConfig build_model_config(const ExperimentConfig& config, const Dataset& data);

}  // namespace mmprompt
