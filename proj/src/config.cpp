#include "mmprompt/config.hpp"

#include <cstdlib>
#include <fstream>

#include "json_util.hpp"

namespace mmprompt {

using detail::read_opt;
using detail::reject_unknown;
using nlohmann::json;
namespace fs = std::filesystem;

json to_json(const BackboneConfig& c) {
  return {{"n_layers", c.n_layers},         {"d_t", c.d_t},
          {"n_heads", c.n_heads},           {"vocab", c.vocab},
          {"max_len", c.max_len},           {"seed", c.seed},
          {"weight_gain", c.weight_gain},   {"embedding_std", c.embedding_std}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  const std::string where = "backbone";
  reject_unknown(j, {"n_layers", "d_t", "n_heads", "vocab", "max_len", "seed", "weight_gain", "embedding_std"}, where);
  BackboneConfig c;
  read_opt(j, "n_layers", c.n_layers, where);
  read_opt(j, "d_t", c.d_t, where);
  read_opt(j, "n_heads", c.n_heads, where);
  read_opt(j, "vocab", c.vocab, where);
  read_opt(j, "max_len", c.max_len, where);
  read_opt(j, "seed", c.seed, where);
  read_opt(j, "weight_gain", c.weight_gain, where);
  read_opt(j, "embedding_std", c.embedding_std, where);
  c.validate();
  return c;
}

json to_json(const ModalityEncoderConfig& c) {
  return {{"modality", c.modality}, {"kind", encoder_kind_name(c.kind)}, {"d_m", c.d_m},
          {"d_feat", c.d_feat},     {"aligned", c.aligned},              {"depth", c.depth},
          {"n_heads", c.n_heads},   {"init_std", c.init_std}};
}

ModalityEncoderConfig encoder_config_from_json(const json& j) {
  const std::string where = "encoders[]";
  reject_unknown(j, {"modality", "kind", "d_m", "d_feat", "aligned", "depth", "n_heads", "init_std"}, where);
  ModalityEncoderConfig c;
  read_opt(j, "modality", c.modality, where);
  if (j.contains("kind")) c.kind = parse_encoder_kind(j.at("kind").get<std::string>());
  read_opt(j, "d_m", c.d_m, where);
  read_opt(j, "d_feat", c.d_feat, where);
  read_opt(j, "aligned", c.aligned, where);
  read_opt(j, "depth", c.depth, where);
  read_opt(j, "n_heads", c.n_heads, where);
  read_opt(j, "init_std", c.init_std, where);
  if (c.modality.empty()) throw ConfigError("encoders[]: modality is required");
  return c;
}

json to_json(const ModelConfig& c) {
  json encoders = json::array();
  for (const ModalityEncoderConfig& e : c.encoders) encoders.push_back(to_json(e));
  return {{"backbone", to_json(c.backbone)},
          {"encoders", encoders},
          {"prompt_length", c.prompt_length},
          {"prompt_depth", c.prompt_depth},
          {"prompt_init_std", c.prompt_init_std},
          {"head_init_std", c.head_init_std}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model";
  reject_unknown(j, {"backbone", "encoders", "prompt_length", "prompt_depth", "prompt_init_std", "head_init_std"}, where);
  ModelConfig c;
  if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"));
  if (j.contains("encoders")) {
    for (const json& e : j.at("encoders")) c.encoders.push_back(encoder_config_from_json(e));
  }
  read_opt(j, "prompt_length", c.prompt_length, where);
  read_opt(j, "prompt_depth", c.prompt_depth, where);
  read_opt(j, "prompt_init_std", c.prompt_init_std, where);
  read_opt(j, "head_init_std", c.head_init_std, where);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  backbone.validate();
  train.validate();
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  if (prompt_depth < 1 || prompt_depth > backbone.n_layers) throw ConfigError("prompt_depth must be in [1, n_layers]");
  if (encoder_d_m < 2 || encoder_d_m >= backbone.d_t) throw ConfigError("encoder_d_m must be in [2, d_t)");
  if (!data.synthetic && (data.train.empty() || data.val.empty() || data.test.empty())) {
    throw ConfigError("data: give either 'synthetic' or all of 'train', 'val' and 'test'");
  }
  if (data.synthetic) {
    data.synthetic->validate();
    if (data.synthetic->d_t != backbone.d_t) throw ConfigError("data.synthetic.d_t must equal backbone.d_t");
    if (data.synthetic->l_t > backbone.max_len) throw ConfigError("data.synthetic.l_t exceeds backbone.max_len");
    if (data.synthetic->vocab > backbone.vocab) throw ConfigError("data.synthetic.vocab exceeds backbone.vocab");
    if (data.synthetic->task != train.task) throw ConfigError("data.synthetic.task and train.task disagree");
  }
}

ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir) {
  const std::string where = "config";
  reject_unknown(j,
                 {"seed", "prompt_template", "output_dir", "backbone", "encoders", "encoder_kind", "encoder_d_m",
                  "prompt_length", "prompt_depth", "prompt_init_std", "head_init_std", "train", "data"},
                 where);
  ExperimentConfig c;
  read_opt(j, "seed", c.seed, where);
  read_opt(j, "prompt_template", c.prompt_template, where);
  if (j.contains("output_dir")) c.output_dir = base_dir / j.at("output_dir").get<std::string>();
  if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"));
  if (j.contains("encoders")) {
    for (const json& e : j.at("encoders")) c.encoders.push_back(encoder_config_from_json(e));
  }
  if (j.contains("encoder_kind")) c.encoder_kind = parse_encoder_kind(j.at("encoder_kind").get<std::string>());
  read_opt(j, "encoder_d_m", c.encoder_d_m, where);
  read_opt(j, "prompt_length", c.prompt_length, where);
  read_opt(j, "prompt_depth", c.prompt_depth, where);
  read_opt(j, "prompt_init_std", c.prompt_init_std, where);
  read_opt(j, "head_init_std", c.head_init_std, where);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"synthetic", "train", "val", "test"}, "data");
    if (d.contains("synthetic")) c.data.synthetic = synthetic_config_from_json(d.at("synthetic"));
    if (d.contains("train")) c.data.train = base_dir / d.at("train").get<std::string>();
    if (d.contains("val")) c.data.val = base_dir / d.at("val").get<std::string>();
    if (d.contains("test")) c.data.test = base_dir / d.at("test").get<std::string>();
  } else {
    c.data.synthetic = SyntheticConfig{};
  }
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json encoders = json::array();
  for (const ModalityEncoderConfig& e : c.encoders) encoders.push_back(to_json(e));
  json data = json::object();
  if (c.data.synthetic) data["synthetic"] = synthetic_config_to_json(*c.data.synthetic);
  if (!c.data.train.empty()) data["train"] = c.data.train.generic_string();
  if (!c.data.val.empty()) data["val"] = c.data.val.generic_string();
  if (!c.data.test.empty()) data["test"] = c.data.test.generic_string();
  return {{"seed", c.seed},
          {"prompt_template", c.prompt_template},
          {"output_dir", c.output_dir.generic_string()},
          {"backbone", to_json(c.backbone)},
          {"encoders", encoders},
          {"encoder_kind", encoder_kind_name(c.encoder_kind)},
          {"encoder_d_m", c.encoder_d_m},
          {"prompt_length", c.prompt_length},
          {"prompt_depth", c.prompt_depth},
          {"prompt_init_std", c.prompt_init_std},
          {"head_init_std", c.head_init_std},
          {"train", to_json(c.train)},
          {"data", data}};
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv(kSeedEnv);
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (end == raw || *end != '\0' || raw[0] == '-') {
    throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer");
  }
  return static_cast<std::uint64_t>(v);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j, path.parent_path());
  if (const auto seed = seed_from_env()) c.seed = *seed;
  c.train.seed = c.seed;
  return c;
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  if (config.data.synthetic) {
    SyntheticSplits s = generate_synthetic(*config.data.synthetic, config.seed);
    return {std::move(s.train), std::move(s.val), std::move(s.test)};
  }
  return {load_dataset(config.data.train), load_dataset(config.data.val), load_dataset(config.data.test)};
}

ModelConfig build_model_config(const ExperimentConfig& config, const Dataset& data) {
  ModelConfig m;
  m.backbone = config.backbone;
  m.prompt_length = config.prompt_length;
  m.prompt_depth = config.prompt_depth;
  m.prompt_init_std = config.prompt_init_std;
  m.head_init_std = config.head_init_std;
  for (const ModalitySpec& spec : data.modalities) {
    const auto explicit_enc = std::find_if(config.encoders.begin(), config.encoders.end(),
                                           [&](const ModalityEncoderConfig& e) { return e.modality == spec.name; });
    ModalityEncoderConfig e;
    if (explicit_enc != config.encoders.end()) {
      e = *explicit_enc;
    } else {
      e.modality = spec.name;
      e.kind = config.encoder_kind;
      e.d_m = config.encoder_d_m;
    }
    e.d_feat = spec.dim;
    e.aligned = spec.aligned;
    e.depth = config.prompt_depth;
    m.encoders.push_back(e);
  }
  m.validate();
  return m;
}

}  // namespace mmprompt
