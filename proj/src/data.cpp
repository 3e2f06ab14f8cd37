#include "mmprompt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json_util.hpp"
#include "mmprompt/rng.hpp"

namespace mmprompt {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view task_kind_name(TaskKind kind) { return kind == TaskKind::Binary ? "binary" : "regression"; }

TaskKind parse_task_kind(std::string_view name) {
  if (name == "regression") return TaskKind::Regression;
  if (name == "binary") return TaskKind::Binary;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

std::vector<double> Dataset::labels() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

void SyntheticConfig::validate() const {
  if (n_train < 1 || n_val < 0 || n_test < 0) throw ConfigError("synthetic: split sizes must be non-negative, n_train >= 1");
  if (l_t < 1) throw ConfigError("synthetic: l_t must be >= 1");
  if (d_m < 2) throw ConfigError("synthetic: d_m must be >= 2");
  if (d_m >= d_t) throw ConfigError("synthetic: d_m must be smaller than d_t");
  if (planted_offset >= d_t - d_m) throw ConfigError("synthetic: planted_offset must be < d_t - d_m");
  if (sigma < 0 || token_noise < 0 || text_noise < 0 || jitter < 0 || label_noise < 0) {
    throw ConfigError("synthetic: noise scales must be >= 0");
  }
  if (label_fn != "linear" && label_fn != "zero") throw ConfigError("synthetic: label_fn must be 'linear' or 'zero'");
  if (!(label_min < label_max)) throw ConfigError("synthetic: label_min must be < label_max");
  for (const SyntheticModality& m : modalities) {
    if (m.name.empty() || m.length < 1) throw ConfigError("synthetic: modality needs a name and length >= 1");
    if (m.aligned && m.length != l_t) throw ConfigError("synthetic: aligned modality '" + m.name + "' needs length l_t");
  }
}

namespace {

Dataset empty_split(const SyntheticConfig& c, std::string split) {
  Dataset d;
  d.split = std::move(split);
  d.task = c.task;
  d.label_min = c.task == TaskKind::Binary ? 0.0 : c.label_min;
  d.label_max = c.task == TaskKind::Binary ? 1.0 : c.label_max;
  d.l_t = c.l_t;
  d.d_t = c.d_t;
  for (const SyntheticModality& m : c.modalities) d.modalities.push_back({m.name, m.length, c.d_m, m.aligned, true});
  return d;
}

Sample draw_sample(const SyntheticConfig& c, const Rng& root, const RowVector<double>& pattern, int offset,
                   std::uint64_t id) {
  Rng rng = root.split(1000 + id);
  Sample s;
  s.id = id;
  const double c_inv = rng.normal();
  std::vector<double> specific;
  for (std::size_t m = 0; m < c.modalities.size(); ++m) specific.push_back(rng.normal());

  s.tokens.resize(static_cast<std::size_t>(c.l_t));
  for (int& t : s.tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.vocab)));

  Matrix z(c.l_t, c.d_m);
  for (Index j = 0; j < z.rows(); ++j) {
    for (Index k = 0; k < z.cols(); ++k) z(j, k) = c_inv * pattern(k) + c.token_noise * rng.normal();
  }
  Matrix text = rng.normal_matrix(c.l_t, c.d_t, c.text_noise);
  text.middleCols(offset, c.d_m) = z;
  s.text_embedding = std::move(text);

  const RowVector<double> z_mean = reduce_mean(z, 0);
  for (std::size_t m = 0; m < c.modalities.size(); ++m) {
    const SyntheticModality& spec = c.modalities[m];
    Matrix f(spec.length, c.d_m);
    if (spec.aligned) {
      f = z;
    } else {
      Matrix jitter = rng.normal_matrix(spec.length, c.d_m, c.jitter);
      jitter.rowwise() -= reduce_mean(jitter, 0).row(0);
      f = jitter.rowwise() + z_mean;
    }
    f.array() += specific[m];
    if (c.sigma > 0) f += rng.normal_matrix(f.rows(), f.cols(), c.sigma);
    s.features[spec.name] = std::move(f);
    s.aligned[spec.name] = spec.aligned;
  }

  double y = c.bias;
  if (c.label_fn == "linear") {
    y += c.w_inv * c_inv;
    for (std::size_t m = 0; m < c.modalities.size(); ++m) y += c.modalities[m].label_weight * specific[m];
  }
  y += c.label_noise * rng.normal();
  if (c.task == TaskKind::Binary) {
    s.label = y > 0 ? 1.0 : 0.0;
  } else {
    s.label = std::clamp(y, c.label_min, c.label_max);
  }
  return s;
}

}  // namespace

SyntheticSplits generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root = Rng(seed).split(streams::kData);
  Rng setup = root.split(0);
  SyntheticSplits out;
  out.planted_offset = config.planted_offset >= 0
                           ? config.planted_offset
                           : static_cast<int>(setup.below(static_cast<std::uint64_t>(config.d_t - config.d_m)));
  RowVector<double> pattern(config.d_m);
  for (Index k = 0; k < pattern.size(); ++k) pattern(k) = setup.normal();

  json provenance = synthetic_config_to_json(config);
  provenance["seed"] = seed;
  provenance["planted_offset"] = out.planted_offset;

  std::uint64_t next_id = 0;
  auto fill = [&](Dataset& d, int n) {
    d.generation = provenance;
    d.generation["id_offset"] = next_id;
    for (int i = 0; i < n; ++i) d.samples.push_back(draw_sample(config, root, pattern, out.planted_offset, next_id++));
  };
  out.train = empty_split(config, "train");
  out.val = empty_split(config, "val");
  out.test = empty_split(config, "test");
  fill(out.train, config.n_train);
  fill(out.val, config.n_val);
  fill(out.test, config.n_test);
  return out;
}

json synthetic_config_to_json(const SyntheticConfig& c) {
  json mods = json::array();
  for (const SyntheticModality& m : c.modalities) {
    mods.push_back({{"name", m.name}, {"length", m.length}, {"aligned", m.aligned}, {"label_weight", m.label_weight}});
  }
  return {{"n_train", c.n_train},       {"n_val", c.n_val},
          {"n_test", c.n_test},         {"l_t", c.l_t},
          {"d_t", c.d_t},               {"d_m", c.d_m},
          {"vocab", c.vocab},           {"planted_offset", c.planted_offset},
          {"token_noise", c.token_noise}, {"text_noise", c.text_noise},
          {"sigma", c.sigma},           {"jitter", c.jitter},
          {"label_fn", c.label_fn},     {"w_inv", c.w_inv},
          {"bias", c.bias},             {"label_noise", c.label_noise},
          {"task", task_kind_name(c.task)}, {"label_range", {c.label_min, c.label_max}},
          {"modalities", mods}};
}

using detail::read_opt;
using detail::reject_unknown;

SyntheticConfig synthetic_config_from_json(const json& j) {
  const std::string where = "synthetic";
  reject_unknown(j,
                 {"n_train", "n_val", "n_test", "l_t", "d_t", "d_m", "vocab", "planted_offset", "token_noise",
                  "text_noise", "sigma", "jitter", "label_fn", "w_inv", "bias", "label_noise", "task", "label_range",
                  "modalities"},
                 where);
  SyntheticConfig c;
  read_opt(j, "n_train", c.n_train, where);
  read_opt(j, "n_val", c.n_val, where);
  read_opt(j, "n_test", c.n_test, where);
  read_opt(j, "l_t", c.l_t, where);
  read_opt(j, "d_t", c.d_t, where);
  read_opt(j, "d_m", c.d_m, where);
  read_opt(j, "vocab", c.vocab, where);
  read_opt(j, "planted_offset", c.planted_offset, where);
  read_opt(j, "token_noise", c.token_noise, where);
  read_opt(j, "text_noise", c.text_noise, where);
  read_opt(j, "sigma", c.sigma, where);
  read_opt(j, "jitter", c.jitter, where);
  read_opt(j, "label_fn", c.label_fn, where);
  read_opt(j, "w_inv", c.w_inv, where);
  read_opt(j, "bias", c.bias, where);
  read_opt(j, "label_noise", c.label_noise, where);
  if (j.contains("task")) c.task = parse_task_kind(j.at("task").get<std::string>());
  if (j.contains("label_range")) {
    const auto r = j.at("label_range").get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("synthetic.label_range must have two entries");
    c.label_min = r[0];
    c.label_max = r[1];
  }
  if (j.contains("modalities")) {
    c.modalities.clear();
    for (const json& m : j.at("modalities")) {
      reject_unknown(m, {"name", "length", "aligned", "label_weight"}, "synthetic.modalities[]");
      SyntheticModality sm;
      read_opt(m, "name", sm.name, where);
      read_opt(m, "length", sm.length, where);
      read_opt(m, "aligned", sm.aligned, where);
      read_opt(m, "label_weight", sm.label_weight, where);
      c.modalities.push_back(sm);
    }
  }
  c.validate();
  return c;
}

// -- manifests -----------------------------------------------------------------

namespace {

constexpr int kManifestVersion = 1;

json file_ref(const std::string& path, std::vector<Index> shape, DType dtype) {
  return {{"path", path}, {"shape", shape}, {"dtype", dtype_name(dtype)}};
}

Index shape_product(const std::vector<Index>& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

struct FileRef {
  fs::path path;
  std::vector<Index> shape;
  DType dtype = DType::F64;
};

FileRef parse_ref(const json& j, const fs::path& base, const std::string& what) {
  try {
    FileRef r;
    r.path = base / j.at("path").get<std::string>();
    r.shape = j.at("shape").get<std::vector<Index>>();
    r.dtype = parse_dtype(j.at("dtype").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed, "manifest " + what + ": " + e.what());
  }
}

void expect_shape(const FileRef& r, const std::vector<Index>& expected, const std::string& what) {
  if (r.shape != expected) {
    throw DataError(DataError::Kind::ShapeMismatch, "manifest " + what + ": declared shape does not match the split");
  }
}

Matrix read_ref(const FileRef& r) {
  const Index n = shape_product(r.shape);
  return read_tensor_file(r.path, 1, n, r.dtype);
}

}  // namespace

fs::path save_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const auto n = static_cast<Index>(data.samples.size());
  const std::string stem = data.split;
  json m;
  m["version"] = kManifestVersion;
  m["split"] = data.split;
  m["n_samples"] = n;
  m["task"] = task_kind_name(data.task);
  m["label_range"] = {data.label_min, data.label_max};
  m["id_offset"] = data.samples.empty() ? 0 : data.samples.front().id;

  std::vector<std::int32_t> tokens;
  for (const Sample& s : data.samples) {
    if (static_cast<int>(s.tokens.size()) != data.l_t) throw DataError(DataError::Kind::ShapeMismatch, "ragged tokens");
    tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
  }
  write_int_file(dir / (stem + ".tokens.bin"), tokens);
  json text;
  text["l_t"] = data.l_t;
  text["tokens"] = file_ref(stem + ".tokens.bin", {n, data.l_t}, DType::I32);
  if (data.d_t > 0) {
    Matrix emb(n * data.l_t, data.d_t);
    for (Index i = 0; i < n; ++i) emb.middleRows(i * data.l_t, data.l_t) = *data.samples[static_cast<std::size_t>(i)].text_embedding;
    write_tensor_file(dir / (stem + ".text.bin"), emb);
    text["embedding"] = file_ref(stem + ".text.bin", {n, data.l_t, data.d_t}, DType::F64);
  } else {
    text["embedding"] = nullptr;
  }
  m["text"] = text;

  json mods = json::array();
  for (const ModalitySpec& spec : data.modalities) {
    json e = {{"name", spec.name}, {"l_m", spec.length}, {"d_feat", spec.dim}, {"aligned", spec.aligned}};
    if (!spec.present) {
      e["file"] = nullptr;
    } else {
      Matrix f(n * spec.length, spec.dim);
      for (Index i = 0; i < n; ++i) {
        const auto& feat = data.samples[static_cast<std::size_t>(i)].features.at(spec.name);
        if (!feat) throw DataError(DataError::Kind::Malformed, "sample lacks modality " + spec.name);
        f.middleRows(i * spec.length, spec.length) = *feat;
      }
      const std::string file = stem + "." + spec.name + ".bin";
      write_tensor_file(dir / file, f);
      e["file"] = file_ref(file, {n, spec.length, spec.dim}, DType::F64);
    }
    mods.push_back(e);
  }
  m["modalities"] = mods;

  Matrix labels(1, n);
  for (Index i = 0; i < n; ++i) labels(0, i) = data.samples[static_cast<std::size_t>(i)].label;
  write_tensor_file(dir / (stem + ".labels.bin"), labels);
  m["labels"] = file_ref(stem + ".labels.bin", {n}, DType::F64);
  m["generation"] = data.generation;

  const fs::path manifest = dir / (stem + ".json");
  std::ofstream out(manifest);
  out << m.dump(2) << '\n';
  if (!out) throw DataError(DataError::Kind::Malformed, "cannot write " + manifest.string());
  return manifest;
}

Dataset load_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError(DataError::Kind::MissingFile, "missing manifest: " + manifest.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed, "manifest " + manifest.string() + ": " + e.what());
  }
  const fs::path base = manifest.parent_path();
  Dataset d;
  Index n = 0;
  try {
    if (m.at("version").get<int>() != kManifestVersion) {
      throw DataError(DataError::Kind::Malformed, "unsupported manifest version");
    }
    d.split = m.at("split").get<std::string>();
    d.task = parse_task_kind(m.at("task").get<std::string>());
    const auto range = m.at("label_range").get<std::vector<double>>();
    if (range.size() != 2) throw DataError(DataError::Kind::Malformed, "label_range needs two entries");
    d.label_min = range[0];
    d.label_max = range[1];
    n = m.at("n_samples").get<Index>();
    d.l_t = m.at("text").at("l_t").get<int>();
    d.generation = m.value("generation", json::object());
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Malformed, "manifest " + manifest.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(DataError::Kind::Malformed, e.what());
  }
  const auto id_offset = m.value("id_offset", std::uint64_t{0});

  const FileRef tok_ref = parse_ref(m["text"]["tokens"], base, "text.tokens");
  expect_shape(tok_ref, {n, d.l_t}, "text.tokens");
  if (tok_ref.dtype != DType::I32) throw DataError(DataError::Kind::Malformed, "tokens must be i32");
  const auto tokens = read_int_file(tok_ref.path, static_cast<std::size_t>(n * d.l_t));

  Matrix text;
  if (!m["text"]["embedding"].is_null()) {
    const FileRef r = parse_ref(m["text"]["embedding"], base, "text.embedding");
    if (r.shape.size() != 3 || r.shape[0] != n || r.shape[1] != d.l_t) {
      throw DataError(DataError::Kind::ShapeMismatch, "text.embedding shape does not match the split");
    }
    d.d_t = static_cast<int>(r.shape[2]);
    text = read_ref(r);
  }

  std::vector<Matrix> feats;
  for (const json& e : m.at("modalities")) {
    ModalitySpec spec;
    try {
      spec.name = e.at("name").get<std::string>();
      spec.length = e.at("l_m").get<int>();
      spec.dim = e.at("d_feat").get<int>();
      spec.aligned = e.at("aligned").get<bool>();
    } catch (const json::exception& ex) {
      throw DataError(DataError::Kind::Malformed, std::string("manifest modality: ") + ex.what());
    }
    spec.present = e.contains("file") && !e.at("file").is_null();
    if (spec.present) {
      const FileRef r = parse_ref(e.at("file"), base, "modality " + spec.name);
      expect_shape(r, {n, spec.length, spec.dim}, "modality " + spec.name);
      feats.push_back(read_ref(r));
    } else {
      feats.emplace_back();
    }
    d.modalities.push_back(spec);
  }

  const FileRef lab_ref = parse_ref(m.at("labels"), base, "labels");
  expect_shape(lab_ref, {n}, "labels");
  const Matrix labels = read_ref(lab_ref);

  d.samples.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Sample& s = d.samples[static_cast<std::size_t>(i)];
    s.id = id_offset + static_cast<std::uint64_t>(i);
    s.tokens.assign(tokens.begin() + i * d.l_t, tokens.begin() + (i + 1) * d.l_t);
    if (d.d_t > 0) {
      s.text_embedding = Eigen::Map<const Matrix>(text.data() + i * d.l_t * d.d_t, d.l_t, d.d_t);
    }
    for (std::size_t k = 0; k < d.modalities.size(); ++k) {
      const ModalitySpec& spec = d.modalities[k];
      s.aligned[spec.name] = spec.aligned;
      if (!spec.present) {
        s.features[spec.name] = std::nullopt;
        continue;
      }
      const Index block = static_cast<Index>(spec.length) * spec.dim;
      s.features[spec.name] = Matrix(Eigen::Map<const Matrix>(feats[k].data() + i * block, spec.length, spec.dim));
    }
    const double y = labels(0, i);
    const bool ok = d.task == TaskKind::Binary ? (y == 0.0 || y == 1.0) : (y >= d.label_min && y <= d.label_max);
    if (!ok) {
      throw DataError(DataError::Kind::LabelOutOfRange,
                      "label " + std::to_string(y) + " of sample " + std::to_string(i) + " is outside the declared range");
    }
    s.label = y;
  }
  return d;
}

Dataset zero_modalities(const Dataset& data, const std::vector<std::string>& names) {
  Dataset out = data;
  for (Sample& s : out.samples) {
    for (const std::string& name : names) {
      auto it = s.features.find(name);
      if (it != s.features.end() && it->second) it->second->setZero();
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

}  // namespace mmprompt
