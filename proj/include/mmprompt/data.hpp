#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmprompt/tensor.hpp"

namespace mmprompt {

enum class TaskKind { Regression, Binary };

std::string_view task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct ModalitySpec {
  std::string name;
  int length = 0;    ///< l_m
  int dim = 0;       ///< d_feat
  bool aligned = true;
  bool present = true;
};

struct Sample {
  std::uint64_t id = 0;
  std::vector<int> tokens;
  /// Optional soft embeddings added to the token embeddings (l_t x d_t).
  std::optional<Matrix> text_embedding;
  /// Absent modalities map to nullopt.
  std::map<std::string, std::optional<Matrix>> features;
  std::map<std::string, bool> aligned;
  double label = 0.0;
};

struct Dataset {
  std::string split;
  TaskKind task = TaskKind::Regression;
  double label_min = -3.0;
  double label_max = 3.0;
  int l_t = 0;
  int d_t = 0;  ///< width of text_embedding, 0 when the split has none
  std::vector<ModalitySpec> modalities;
  std::vector<Sample> samples;
  /// Generator provenance, copied verbatim into the manifest.
  nlohmann::json generation = nlohmann::json::object();

  std::vector<double> labels() const;
};

/// One non-text modality of the synthetic generator.
struct SyntheticModality {
  std::string name;
  int length = 16;
  bool aligned = true;
  /// Weight of this modality's specific latent in the label.
  double label_weight = 1.0;
};

/// Planted-structure generator parameters.
///
/// Each sample draws a shared latent c_inv and one specific latent s_m per
/// modality. Every token carries a d_m-wide pattern z_j = c_inv * q + e_j
/// (q a fixed pattern, e_j noise); the text soft embedding holds z_j at
/// channels [planted_offset, planted_offset + d_m) and independent noise
/// elsewhere. Aligned modality row j is z_j + s_m (a constant shift across
/// channels, invisible to Pearson correlation) plus noise; unaligned
/// modalities carry the temporal mean of z with zero-mean temporal jitter.
/// label = bias + w_inv * c_inv + sum_m w_m * s_m + label_noise * eps.
struct SyntheticConfig {
  int n_train = 512;
  int n_val = 64;
  int n_test = 128;
  int l_t = 16;
  int d_t = 64;
  int d_m = 16;
  int vocab = 256;
  /// -1 draws the offset from the seed.
  int planted_offset = -1;
  /// Per-token variation of the shared pattern.
  double token_noise = 1.0;
  /// Scale of the non-planted text channels.
  double text_noise = 1.0;
  /// Noise added to modality features.
  double sigma = 0.1;
  double jitter = 0.5;
  /// "linear" (default) or "zero" (label = bias + noise).
  std::string label_fn = "linear";
  double w_inv = 1.0;
  double bias = 0.0;
  double label_noise = 0.1;
  TaskKind task = TaskKind::Regression;
  double label_min = -3.0;
  double label_max = 3.0;
  std::vector<SyntheticModality> modalities = {{"a", 16, true, 0.8}, {"v", 11, false, 0.6}};

  void validate() const;
};

struct SyntheticSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  int planted_offset = 0;
};

SyntheticSplits generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

nlohmann::json synthetic_config_to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

/// Writes `<dir>/<split>.json` plus one tensor file per array. Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Reads a manifest written by save_dataset (or converted from an external dump).
/// Throws DataError with kind MissingFile, ShapeMismatch, LabelOutOfRange or Malformed.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Copy with the listed modalities' features replaced by zeros.
Dataset zero_modalities(const Dataset& data, const std::vector<std::string>& names);

/// Index batches in order, or shuffled by `shuffle_seed` when given.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);

}  // namespace mmprompt
