#include "mmprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmprompt/autograd.hpp"
#include "mmprompt/pafis.hpp"

namespace mmprompt {

namespace {

void same_length(std::span<const double> a, std::span<const double> b, const char* where) {
  if (a.size() != b.size()) throw ShapeError(std::string(where) + ": length mismatch");
}

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

double mae(std::span<const double> preds, std::span<const double> labels) {
  same_length(preds, labels, "mae");
  if (preds.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - labels[i]);
  return total / static_cast<double>(preds.size());
}

double pearson(std::span<const double> preds, std::span<const double> labels) {
  same_length(preds, labels, "pearson");
  if (preds.size() < 2) return 0.0;
  const auto n = static_cast<Index>(preds.size());
  Eigen::Map<const Eigen::VectorXd> x(preds.data(), n);
  Eigen::Map<const Eigen::VectorXd> y(labels.data(), n);
  return window_pearson(x, y);
}

double acc7(std::span<const double> preds, std::span<const double> labels, double lo, double hi) {
  same_length(preds, labels, "acc7");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = std::round(std::clamp(preds[i], lo, hi));
    const double y = std::round(std::clamp(labels[i], lo, hi));
    hits += p == y ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double acc5(std::span<const double> preds, std::span<const double> labels, double lo, double hi) {
  same_length(preds, labels, "acc5");
  if (preds.empty()) return 0.0;
  auto bin = [lo, hi](double v) {
    const double r = std::round(std::clamp(v, lo, hi));
    return std::clamp(r, lo + 1.0, hi - 1.0);
  };
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += bin(preds[i]) == bin(labels[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::pair<double, double> acc2_f1(std::span<const double> preds, std::span<const double> labels) {
  same_length(preds, labels, "acc2_f1");
  double tp = 0, fp = 0, fn = 0, hits = 0, n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 0.0) continue;
    const bool truth = labels[i] > 0;
    const bool guess = preds[i] > 0;
    n += 1;
    hits += truth == guess ? 1 : 0;
    if (guess && truth) tp += 1;
    if (guess && !truth) fp += 1;
    if (!guess && truth) fn += 1;
  }
  const double precision = safe_ratio(tp, tp + fp);
  const double recall = safe_ratio(tp, tp + fn);
  return {safe_ratio(hits, n), safe_ratio(2 * precision * recall, precision + recall)};
}

PrecisionRecall precision_recall(std::span<const int> pred_classes, std::span<const double> labels) {
  if (pred_classes.size() != labels.size()) throw ShapeError("precision_recall: length mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth = labels[i] > 0.5;
    const bool guess = pred_classes[i] == 1;
    if (guess && truth) tp += 1;
    if (guess && !truth) fp += 1;
    if (!guess && truth) fn += 1;
  }
  return {safe_ratio(tp, tp + fp), safe_ratio(tp, tp + fn)};
}

MetricReport evaluate_predictions(TaskKind task, std::span<const double> outputs, std::span<const double> labels,
                                  double label_min, double label_max) {
  same_length(outputs, labels, "evaluate_predictions");
  MetricReport r;
  r.n_samples = outputs.size();
  if (task == TaskKind::Binary) {
    std::vector<int> classes;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      classes.push_back(logistic(outputs[i]) > 0.5 ? 1 : 0);
      hits += (classes.back() == 1) == (labels[i] > 0.5) ? 1 : 0;
    }
    const PrecisionRecall pr = precision_recall(classes, labels);
    r.acc2 = outputs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(outputs.size());
    r.precision = pr.precision;
    r.recall = pr.recall;
    r.f1 = safe_ratio(2 * pr.precision * pr.recall, pr.precision + pr.recall);
    return r;
  }
  r.mae = mae(outputs, labels);
  r.corr = pearson(outputs, labels);
  const auto [a2, f1] = acc2_f1(outputs, labels);
  r.acc2 = a2;
  r.f1 = f1;
  if (label_min == -3.0 && label_max == 3.0) r.acc7 = acc7(outputs, labels, label_min, label_max);
  if (label_min == 1.0 && label_max == 7.0) {
    r.acc7 = acc7(outputs, labels, label_min, label_max);
    r.acc5 = acc5(outputs, labels, label_min, label_max);
  }
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("mae", r.mae);
  put("corr", r.corr);
  put("acc2", r.acc2);
  put("f1", r.f1);
  put("acc7", r.acc7);
  put("acc5", r.acc5);
  put("precision", r.precision);
  put("recall", r.recall);
  j["n_samples"] = r.n_samples;
  return j;
}

std::string metric_csv_header() { return "MAE,Corr,Acc2,F1,Acc7,Acc5,Pre,Rec"; }

std::string metric_csv_row(const MetricReport& r) {
  auto fmt = [](const std::optional<double>& v, bool percent) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), percent ? "%.1f" : "%.3f", percent ? *v * 100.0 : *v);
    return std::string(buf);
  };
  return fmt(r.mae, false) + ',' + fmt(r.corr, false) + ',' + fmt(r.acc2, true) + ',' + fmt(r.f1, true) + ',' +
         fmt(r.acc7, true) + ',' + fmt(r.acc5, true) + ',' + fmt(r.precision, true) + ',' + fmt(r.recall, true);
}

}  // namespace mmprompt
