#pragma once

#include <optional>
#include <span>
#include <utility>

#include <nlohmann/json.hpp>

#include "mmprompt/data.hpp"

namespace mmprompt {

double mae(std::span<const double> preds, std::span<const double> labels);

/// Sample Pearson r; 0 when either side is constant or N < 2.
double pearson(std::span<const double> preds, std::span<const double> labels);

/// Exact-match rate after clamping predictions to [lo, hi] and rounding both
/// sides to the nearest integer.
double acc7(std::span<const double> preds, std::span<const double> labels, double lo = -3.0, double hi = 3.0);

/// Five-bin accuracy for [1, 7] labels: round, then merge {1,2} and {6,7}.
double acc5(std::span<const double> preds, std::span<const double> labels, double lo = 1.0, double hi = 7.0);

/// Sign agreement over samples with a non-zero label, and F1 of the positive
/// class on the same subset. 0/0 ratios count as 0.
std::pair<double, double> acc2_f1(std::span<const double> preds, std::span<const double> labels);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Binary predictions against {0,1} labels; 0/0 ratios count as 0.
PrecisionRecall precision_recall(std::span<const int> pred_classes, std::span<const double> labels);

struct MetricReport {
  std::optional<double> mae;
  std::optional<double> corr;
  std::optional<double> acc2;
  std::optional<double> f1;
  std::optional<double> acc7;
  std::optional<double> acc5;
  std::optional<double> precision;
  std::optional<double> recall;
  std::size_t n_samples = 0;
};

/// Regression outputs get MAE/Corr/Acc-2/F1 plus Acc-7 ([-3,3] labels) or
/// Acc-5 ([1,7] labels). Binary logits are thresholded at logistic 0.5.
MetricReport evaluate_predictions(TaskKind task, std::span<const double> outputs, std::span<const double> labels,
                                  double label_min, double label_max);

nlohmann::json to_json(const MetricReport& r);

/// Columns of the results CSV: percentages x100 with one decimal, MAE and Corr with three.
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);

}  // namespace mmprompt
