#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmprompt/data.hpp"
#include "mmprompt/metrics.hpp"
#include "mmprompt/model.hpp"

namespace mmprompt {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int max_epochs = 40;
  int patience = 5;
  /// Hard cap on optimizer steps; early stopping is disabled when set.
  std::optional<int> max_steps;
  std::uint64_t seed = 0;
  TaskKind task = TaskKind::Regression;
  bool use_pafis = true;
  bool use_modality_a = true;
  bool use_modality_v = true;
  /// false zeroes that modality at evaluation (val and test).
  bool test_a = true;
  bool test_v = true;

  void validate() const;
};

/// Fusion options for training or for evaluation under `config`.
/// Modalities other than "a" and "v" are always active.
FusionOptions train_options(const TrainConfig& config, const std::vector<ModalitySpec>& modalities);
FusionOptions eval_options(const TrainConfig& config, const std::vector<ModalitySpec>& modalities);

struct EpochRecord {
  int epoch = 0;
  /// Mean batch loss over the epoch; the loss at initialization for epoch 0.
  double train_loss = 0.0;
  MetricReport val;
  double val_score = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_score = 0.0;
  std::size_t steps = 0;
  bool early_stopped = false;
  MetricReport train_metrics;
  std::optional<MetricReport> test_metrics;
  std::string checksum_before;
  std::string checksum_after;
  std::vector<std::string> trainable;
  std::size_t trainable_count = 0;
  /// Not part of to_json: kept out so reports compare byte for byte.
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const TrainReport& r);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Frozen text states entering the first prompted layer, one per sample.
std::vector<Matrix> prefix_cache(const PromptedModel& model, const Dataset& data);

std::vector<double> predict_all(const PromptedModel& model, const Dataset& data, const FusionOptions& options,
                                const std::vector<Matrix>* cache = nullptr);

MetricReport evaluate(const PromptedModel& model, const Dataset& data, const FusionOptions& options,
                      const std::vector<Matrix>* cache = nullptr);

/// Model-selection score: val MAE for regression (lower is better), Acc-2 for
/// binary tasks, negated so lower is always better.
double selection_score(TaskKind task, const MetricReport& r);

/// Loss of one batch on `tape`: RMSE for regression, BCE with logits for binary.
Var batch_loss(Tape& tape, const PromptedModel& model, const Dataset& data, std::span<const std::size_t> batch,
               const FusionOptions& options, TaskKind task, const std::vector<Matrix>* cache = nullptr);

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps);
  void step();
  void zero_grad();
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Trains the model's trainable parameters, restores the best-validation
/// weights and evaluates on `test` when given. Throws NumericError on a
/// non-finite loss and FrozenViolation if the backbone changed.
TrainReport train(PromptedModel& model, const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const Dataset* test_set = nullptr);

struct Checkpoint {
  PromptedModel model;
  /// Fusion the model was trained with; evaluation starts from it.
  FusionOptions fusion;
  std::uint64_t model_seed = 0;
};

/// Trainable parameters as tensor files plus `checkpoint.json` holding the
/// model config, model seed, fusion options and backbone checksum.
void save_checkpoint(const PromptedModel& model, std::uint64_t model_seed, const FusionOptions& fusion,
                     const std::filesystem::path& dir);
/// Rebuilds the model from the stored config and seed, then loads the tensors.
/// Throws FrozenViolation when the rebuilt backbone does not match the checksum.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mmprompt
