#include "mmprompt/experiments.hpp"

#include <algorithm>
#include <sstream>

namespace mmprompt {

std::vector<AblationArm> ablation_arms() {
  return {
      {"text-only", false, false, false, false, false},
      {"pafis-a", true, true, false, true, false},
      {"pafis-v", true, false, true, false, true},
      {"direct-add", false, true, true, true, true},
      {"full-test-none", true, true, true, false, false},
      {"full-test-a", true, true, true, true, false},
      {"full-test-v", true, true, true, false, true},
      {"full", true, true, true, true, true},
  };
}

std::vector<std::string> parse_grid(const std::string& spec) {
  std::vector<std::string> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item != "pafis" && item != "modalities" && item != "test-drop") {
      throw ConfigError("unknown grid dimension '" + item + "' (expected pafis, modalities, test-drop)");
    }
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty ablation grid");
  return out;
}

std::vector<AblationArm> select_arms(const std::vector<std::string>& dimensions) {
  auto has = [&](const char* d) { return std::find(dimensions.begin(), dimensions.end(), d) != dimensions.end(); };
  std::vector<AblationArm> out;
  for (const AblationArm& arm : ablation_arms()) {
    const bool trained_full = arm.use_a && arm.use_v;
    const bool drops_at_test = trained_full && (!arm.test_a || !arm.test_v);
    if (!arm.use_pafis && !has("pafis")) continue;
    if (!trained_full && !has("modalities")) continue;
    if (drops_at_test && !has("test-drop")) continue;
    out.push_back(arm);
  }
  return out;
}

namespace {

TrainConfig arm_config(const TrainConfig& base, const AblationArm& arm) {
  TrainConfig c = base;
  c.use_pafis = arm.use_pafis;
  c.use_modality_a = arm.use_a;
  c.use_modality_v = arm.use_v;
  c.test_a = arm.use_a;
  c.test_v = arm.use_v;
  return c;
}

bool same_training(const AblationArm& x, const AblationArm& y) {
  return x.use_pafis == y.use_pafis && x.use_a == y.use_a && x.use_v == y.use_v;
}

}  // namespace

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, const ExperimentData& data,
                                      const std::vector<AblationArm>& arms) {
  std::vector<AblationRow> rows(arms.size());
  for (std::size_t i = 0; i < arms.size(); ++i) {
    rows[i].arm = arms[i];
    std::size_t owner = i;
    for (std::size_t k = 0; k < i; ++k) {
      if (same_training(arms[k], arms[i])) {
        owner = rows[k].trained_with;
        break;
      }
    }
    rows[i].trained_with = owner;
  }
  const ModelConfig model_config = build_model_config(config, data.train);
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (rows[i].trained_with != i) continue;
    PromptedModel model(model_config, config.seed);
    const TrainConfig tc = arm_config(config.train, arms[i]);
    rows[i].report = train(model, tc, data.train, data.val);
    for (std::size_t k = i; k < arms.size(); ++k) {
      if (rows[k].trained_with != i) continue;
      TrainConfig test_config = tc;
      test_config.test_a = arms[k].test_a && arms[k].use_a;
      test_config.test_v = arms[k].test_v && arms[k].use_v;
      const FusionOptions o = eval_options(test_config, data.test.modalities);
      rows[k].test_predictions = predict_all(model, data.test, o);
      rows[k].test = evaluate(model, data.test, o);
      if (k != i) rows[k].report = rows[i].report;
    }
  }
  return rows;
}

std::string ablation_csv_header() { return "arm,PaFIS,h_a,h_v,Test_a,Test_v," + metric_csv_header(); }

std::string ablation_csv_row(const AblationRow& row) {
  const AblationArm& a = row.arm;
  auto flag = [](bool b) { return b ? "1" : "0"; };
  std::ostringstream os;
  os << a.name << ',' << flag(a.use_pafis) << ',' << flag(a.use_a) << ',' << flag(a.use_v) << ','
     << flag(a.test_a && a.use_a) << ',' << flag(a.test_v && a.use_v) << ',' << metric_csv_row(row.test);
  return os.str();
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "prompt_length") return SweepParam::PromptLength;
  if (name == "prompt_depth") return SweepParam::PromptDepth;
  throw ConfigError("unknown sweep parameter '" + name + "' (expected prompt_length or prompt_depth)");
}

std::string sweep_param_name(SweepParam p) { return p == SweepParam::PromptLength ? "prompt_length" : "prompt_depth"; }

std::vector<int> parse_range(const std::string& spec) {
  std::vector<int> out;
  try {
    const auto dots = spec.find("..");
    if (dots != std::string::npos) {
      const int lo = std::stoi(spec.substr(0, dots));
      const int hi = std::stoi(spec.substr(dots + 2));
      if (hi < lo) throw ConfigError("empty range '" + spec + "'");
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      std::stringstream ss(spec);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
      }
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse range '" + spec + "'");
  }
  if (out.empty()) throw ConfigError("empty range '" + spec + "'");
  return out;
}

std::vector<SweepPoint> run_sweep(const ExperimentConfig& config, SweepParam param, const std::vector<int>& values,
                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepPoint> out;
  for (const std::uint64_t seed : seeds) {
    ExperimentConfig base = config;
    base.seed = seed;
    base.train.seed = seed;
    const ExperimentData data = load_experiment_data(base);
    for (const int v : values) {
      ExperimentConfig c = base;
      (param == SweepParam::PromptLength ? c.prompt_length : c.prompt_depth) = v;
      c.validate();
      PromptedModel model(build_model_config(c, data.train), seed);
      const TrainReport r = train(model, c.train, data.train, data.val, &data.test);
      out.push_back({v, seed, r.train_metrics, *r.test_metrics, r.best_epoch});
    }
  }
  return out;
}

std::string sweep_csv(SweepParam param, const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << sweep_param_name(param) << ",seed,split,best_epoch," << metric_csv_header() << '\n';
  for (const SweepPoint& p : points) {
    os << p.value << ',' << p.seed << ",train," << p.best_epoch << ',' << metric_csv_row(p.train) << '\n';
    os << p.value << ',' << p.seed << ",test," << p.best_epoch << ',' << metric_csv_row(p.test) << '\n';
  }
  return os.str();
}

}  // namespace mmprompt
