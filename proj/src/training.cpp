#include "mmprompt/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "json_util.hpp"
#include "mmprompt/config.hpp"
#include "mmprompt/rng.hpp"

namespace mmprompt {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (max_steps && *max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
}

namespace {

FusionOptions options_for(const TrainConfig& c, const std::vector<ModalitySpec>& modalities, bool at_test) {
  FusionOptions o;
  o.use_pafis = c.use_pafis;
  for (const ModalitySpec& m : modalities) {
    if (!m.present) continue;
    if (m.name == "a" && !c.use_modality_a) continue;
    if (m.name == "v" && !c.use_modality_v) continue;
    o.active.push_back(m.name);
    if (at_test && ((m.name == "a" && !c.test_a) || (m.name == "v" && !c.test_v))) o.zeroed.push_back(m.name);
  }
  return o;
}

}  // namespace

FusionOptions train_options(const TrainConfig& config, const std::vector<ModalitySpec>& modalities) {
  return options_for(config, modalities, false);
}

FusionOptions eval_options(const TrainConfig& config, const std::vector<ModalitySpec>& modalities) {
  return options_for(config, modalities, true);
}

std::vector<Matrix> prefix_cache(const PromptedModel& model, const Dataset& data) {
  std::vector<Matrix> out;
  out.reserve(data.samples.size());
  for (const Sample& s : data.samples) out.push_back(model.frozen_prefix(s));
  return out;
}

std::vector<double> predict_all(const PromptedModel& model, const Dataset& data, const FusionOptions& options,
                                const std::vector<Matrix>* cache) {
  std::vector<double> out;
  out.reserve(data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    out.push_back(model.predict(data.samples[i], options, cache != nullptr ? &(*cache)[i] : nullptr));
  }
  return out;
}

MetricReport evaluate(const PromptedModel& model, const Dataset& data, const FusionOptions& options,
                      const std::vector<Matrix>* cache) {
  const std::vector<double> preds = predict_all(model, data, options, cache);
  return evaluate_predictions(data.task, preds, data.labels(), data.label_min, data.label_max);
}

double selection_score(TaskKind task, const MetricReport& r) {
  if (task == TaskKind::Binary) return -r.acc2.value_or(0.0);
  return r.mae.value_or(std::numeric_limits<double>::infinity());
}

Var batch_loss(Tape& tape, const PromptedModel& model, const Dataset& data, std::span<const std::size_t> batch,
               const FusionOptions& options, TaskKind task, const std::vector<Matrix>* cache) {
  std::vector<Var> preds;
  std::vector<double> labels;
  preds.reserve(batch.size());
  for (const std::size_t i : batch) {
    preds.push_back(model.forward(tape, data.samples[i], options, cache != nullptr ? &(*cache)[i] : nullptr));
    labels.push_back(data.samples[i].label);
  }
  Var stacked = concat_rows(preds);
  return task == TaskKind::Binary ? bce_with_logits(stacked, labels) : rmse_loss(stacked, labels);
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.size() == 0) continue;
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * p.grad;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

namespace {

std::vector<Matrix> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Parameter*>& params, const std::vector<Matrix>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
}

double dataset_loss(const PromptedModel& model, const Dataset& data, const FusionOptions& options, TaskKind task,
                    const std::vector<Matrix>& cache) {
  const std::vector<double> preds = predict_all(model, data, options, &cache);
  const std::vector<double> labels = data.labels();
  Tape tape;
  Var p = tape.constant(Eigen::Map<const Matrix>(preds.data(), static_cast<Index>(preds.size()), 1));
  return (task == TaskKind::Binary ? bce_with_logits(p, labels) : rmse_loss(p, labels)).value()(0, 0);
}

}  // namespace

TrainReport train(PromptedModel& model, const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const Dataset* test_set) {
  config.validate();
  if (train_set.samples.empty()) throw DataError(DataError::Kind::Malformed, "training split is empty");
  if (val_set.samples.empty()) throw DataError(DataError::Kind::Malformed, "validation split is empty");
  const auto started = std::chrono::steady_clock::now();

  TrainReport report;
  report.checksum_before = model.backbone().checksum();
  report.trainable = trainable_census(model);
  const std::vector<Parameter*> params = model.trainable_parameters();
  for (const Parameter* p : params) report.trainable_count += static_cast<std::size_t>(p->value.size());

  const FusionOptions fit = train_options(config, train_set.modalities);
  const FusionOptions val_opts = eval_options(config, val_set.modalities);
  const std::vector<Matrix> train_cache = prefix_cache(model, train_set);
  const std::vector<Matrix> val_cache = prefix_cache(model, val_set);

  auto record_epoch = [&](int epoch, double loss) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = loss;
    r.val = evaluate(model, val_set, val_opts, &val_cache);
    r.val_score = selection_score(config.task, r.val);
    report.epochs.push_back(r);
    return r.val_score;
  };

  report.best_val_score = record_epoch(0, dataset_loss(model, train_set, fit, config.task, train_cache));
  std::vector<Matrix> best = snapshot(params);

  Adam adam(params, config.lr, config.beta1, config.beta2, config.adam_eps);
  const Rng shuffle_root = Rng(config.seed).split(streams::kShuffle);
  const bool capped = config.max_steps.has_value();
  int bad_epochs = 0;
  for (int epoch = 1; epoch <= config.max_epochs || capped; ++epoch) {
    if (capped && adam.steps() >= static_cast<std::size_t>(*config.max_steps)) break;
    const auto batches = make_batches(train_set.samples.size(), static_cast<std::size_t>(config.batch_size),
                                      shuffle_root.split(static_cast<std::uint64_t>(epoch)).next_u64());
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (const auto& batch : batches) {
      if (capped && adam.steps() >= static_cast<std::size_t>(*config.max_steps)) break;
      Tape tape;
      Var loss = batch_loss(tape, model, train_set, batch, fit, config.task, &train_cache);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(adam.steps() + 1));
      }
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      loss_sum += value;
      ++n_batches;
    }
    const double score = record_epoch(epoch, n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0);
    if (score < report.best_val_score) {
      report.best_val_score = score;
      report.best_epoch = epoch;
      best = snapshot(params);
      bad_epochs = 0;
    } else if (!capped && ++bad_epochs >= config.patience) {
      report.early_stopped = epoch < config.max_epochs;
      break;
    }
  }
  restore(params, best);
  adam.zero_grad();
  report.steps = adam.steps();

  report.train_metrics = evaluate(model, train_set, eval_options(config, train_set.modalities), &train_cache);
  if (test_set != nullptr) report.test_metrics = evaluate(model, *test_set, eval_options(config, test_set->modalities));

  report.checksum_after = model.backbone().checksum();
  if (report.checksum_after != report.checksum_before) {
    throw FrozenViolation("backbone parameters changed during training");
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

json to_json(const TrainConfig& c) {
  json j = {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"max_steps", nullptr},
            {"seed", c.seed},
            {"task", task_kind_name(c.task)},
            {"use_pafis", c.use_pafis},
            {"use_modality_a", c.use_modality_a},
            {"use_modality_v", c.use_modality_v},
            {"test_a", c.test_a},
            {"test_v", c.test_v}};
  if (c.max_steps) j["max_steps"] = *c.max_steps;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  const std::string where = "train";
  detail::reject_unknown(j,
                         {"lr", "beta1", "beta2", "adam_eps", "batch_size", "max_epochs", "patience", "max_steps",
                          "seed", "task", "use_pafis", "use_modality_a", "use_modality_v", "test_a", "test_v"},
                         where);
  TrainConfig c;
  detail::read_opt(j, "lr", c.lr, where);
  detail::read_opt(j, "beta1", c.beta1, where);
  detail::read_opt(j, "beta2", c.beta2, where);
  detail::read_opt(j, "adam_eps", c.adam_eps, where);
  detail::read_opt(j, "batch_size", c.batch_size, where);
  detail::read_opt(j, "max_epochs", c.max_epochs, where);
  detail::read_opt(j, "patience", c.patience, where);
  if (j.contains("max_steps") && !j.at("max_steps").is_null()) {
    int steps = 0;
    detail::read_opt(j, "max_steps", steps, where);
    c.max_steps = steps;
  }
  detail::read_opt(j, "seed", c.seed, where);
  if (j.contains("task")) c.task = parse_task_kind(j.at("task").get<std::string>());
  detail::read_opt(j, "use_pafis", c.use_pafis, where);
  detail::read_opt(j, "use_modality_a", c.use_modality_a, where);
  detail::read_opt(j, "use_modality_v", c.use_modality_v, where);
  detail::read_opt(j, "test_a", c.test_a, where);
  detail::read_opt(j, "test_v", c.test_v, where);
  c.validate();
  return c;
}

json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", to_json(e.val)}, {"val_score", e.val_score}});
  }
  return {{"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"best_val_score", r.best_val_score},
          {"steps", r.steps},
          {"early_stopped", r.early_stopped},
          {"train_metrics", to_json(r.train_metrics)},
          {"test_metrics", r.test_metrics ? to_json(*r.test_metrics) : json(nullptr)},
          {"backbone_checksum_before", r.checksum_before},
          {"backbone_checksum_after", r.checksum_after},
          {"trainable_parameters", r.trainable},
          {"trainable_count", r.trainable_count}};
}

// -- checkpoints ---------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFile = "checkpoint.json";

}  // namespace

void save_checkpoint(const PromptedModel& model, std::uint64_t model_seed, const FusionOptions& fusion,
                     const fs::path& dir) {
  fs::create_directories(dir);
  json tensors = json::array();
  for (const Parameter* p : model.trainable_parameters()) {
    const std::string file = p->name + ".bin";
    write_tensor_file(dir / file, p->value, DType::F64);
    tensors.push_back({{"name", p->name},
                       {"path", file},
                       {"shape", {p->value.rows(), p->value.cols()}},
                       {"dtype", dtype_name(DType::F64)}});
  }
  const json manifest = {{"version", 1},
                         {"model_seed", model_seed},
                         {"model", to_json(model.config())},
                         {"fusion", {{"use_pafis", fusion.use_pafis}, {"active", fusion.active}}},
                         {"backbone_checksum", model.backbone().checksum()},
                         {"tensors", tensors}};
  std::ofstream out(dir / kCheckpointFile, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::MissingFile, "cannot write " + (dir / kCheckpointFile).string());
  out << manifest.dump(2) << '\n';
}

namespace {

Checkpoint read_checkpoint(const fs::path& dir) {
  const fs::path path = dir / kCheckpointFile;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::MissingFile, "missing checkpoint " + path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed, path.string() + ": " + e.what());
  }
  const auto seed = manifest.at("model_seed").get<std::uint64_t>();
  PromptedModel model(model_config_from_json(manifest.at("model")), seed);
  if (model.backbone().checksum() != manifest.at("backbone_checksum").get<std::string>()) {
    throw FrozenViolation("rebuilt backbone does not match the checkpoint checksum");
  }
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.trainable_parameters()) by_name[p->name] = p;
  std::size_t loaded = 0;
  for (const json& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(DataError::Kind::Malformed, "checkpoint: unknown tensor '" + name + "'");
    const auto shape = t.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] != it->second->value.rows() || shape[1] != it->second->value.cols()) {
      throw DataError(DataError::Kind::ShapeMismatch, "checkpoint: tensor '" + name + "' has the wrong shape");
    }
    it->second->value = read_tensor_file(dir / t.at("path").get<std::string>(), shape[0], shape[1],
                                         parse_dtype(t.at("dtype").get<std::string>()));
    ++loaded;
  }
  if (loaded != by_name.size()) throw DataError(DataError::Kind::Malformed, "checkpoint: missing tensors");
  FusionOptions fusion;
  fusion.use_pafis = manifest.at("fusion").at("use_pafis").get<bool>();
  fusion.active = manifest.at("fusion").at("active").get<std::vector<std::string>>();
  return {std::move(model), std::move(fusion), seed};
}

}  // namespace

Checkpoint load_checkpoint(const fs::path& dir) {
  try {
    return read_checkpoint(dir);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed, (dir / kCheckpointFile).string() + ": " + e.what());
  }
}

}  // namespace mmprompt
