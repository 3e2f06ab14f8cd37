#pragma once

#include <string>
#include <vector>

#include "mmprompt/config.hpp"
#include "mmprompt/metrics.hpp"
#include "mmprompt/training.hpp"

namespace mmprompt {

/// One row of the ablation table. Training uses (use_pafis, use_a, use_v);
/// test_a / test_v decide which modalities reach the model at test time.
struct AblationArm {
  std::string name;
  bool use_pafis = true;
  bool use_a = true;
  bool use_v = true;
  bool test_a = true;
  bool test_v = true;
};

/// The eight rows of the ablation table, in table order: text only, PaFIS+a,
/// PaFIS+v, direct addition of a and v, then the full model tested with no
/// modality, a only, v only and both.
std::vector<AblationArm> ablation_arms();

/// Grid dimensions: "pafis", "modalities", "test-drop". An arm is kept when
/// every way it differs from the full model is a selected dimension.
std::vector<AblationArm> select_arms(const std::vector<std::string>& dimensions);
std::vector<std::string> parse_grid(const std::string& spec);

struct AblationRow {
  AblationArm arm;
  MetricReport test;
  std::vector<double> test_predictions;
  /// Index of the row whose trained model this row reuses (itself if trained here).
  std::size_t trained_with = 0;
  TrainReport report;
};

/// Trains one model per distinct training configuration among `arms`.
std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const ExperimentData& data,
                                      const std::vector<AblationArm>& arms);

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

enum class SweepParam { PromptLength, PromptDepth };
SweepParam parse_sweep_param(const std::string& name);
std::string sweep_param_name(SweepParam p);
/// "2..16", "1..6" or "2,4,8".
std::vector<int> parse_range(const std::string& spec);

struct SweepPoint {
  int value = 0;
  std::uint64_t seed = 0;
  MetricReport train;
  MetricReport test;
  int best_epoch = 0;
};

std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, SweepParam param, const std::vector<int>& values,
                                  const std::vector<std::uint64_t>& seeds);

/// Long format: one row per (value, seed, split) so train and test curves sit side by side.
std::string sweep_csv(SweepParam param, const std::vector<SweepPoint>& points);

}  // namespace mmprompt
