// Command-line front end: gen-data, train, eval, ablate, sweep, inspect-corr.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mmprompt/config.hpp"
#include "mmprompt/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmprompt;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4, kFrozen = 5 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::MissingFile, "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string csv_matrix(const Matrix& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << m(r, c);
    os << '\n';
  }
  return os.str();
}

int gen_data(const fs::path& config_path, const fs::path& out) {
  const ExperimentConfig c = load_experiment_config(config_path);
  if (!c.data.synthetic) throw ConfigError("gen-data needs a 'data.synthetic' section");
  const SyntheticSplits s = generate_synthetic(*c.data.synthetic, c.seed);
  for (const Dataset* d : {&s.train, &s.val, &s.test}) std::cout << save_dataset(*d, out).string() << '\n';
  std::cout << "seed " << c.seed << "\nplanted_offset " << s.planted_offset << '\n'
            << "planted " << s.train.generation.dump() << '\n';
  return kOk;
}

int train_cmd(const fs::path& config_path, const fs::path& out) {
  const ExperimentConfig c = load_experiment_config(config_path);
  const ExperimentData data = load_experiment_data(c);
  PromptedModel model(build_model_config(c, data.train), c.seed);
  const TrainReport r = train(model, c.train, data.train, data.val, &data.test);
  fs::create_directories(out);
  save_checkpoint(model, c.seed, train_options(c.train, data.train.modalities), out / "checkpoint");
  json report = to_json(r);
  report["config"] = to_json(c);
  write_json(out / "report.json", report);
  write_json(out / "timing.json", {{"wall_seconds", r.wall_seconds}});
  write_text(out / "metrics.csv", "split," + metric_csv_header() + "\ntrain," + metric_csv_row(r.train_metrics) +
                                      "\ntest," + metric_csv_row(*r.test_metrics) + "\n");
  std::cout << "best epoch " << r.best_epoch << ", steps " << r.steps << '\n'
            << metric_csv_header() << '\n'
            << metric_csv_row(*r.test_metrics) << '\n';
  return kOk;
}

int eval_cmd(const fs::path& checkpoint, const fs::path& manifest, const std::vector<std::string>& drop,
             const std::string& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(manifest);
  FusionOptions o = ck.fusion;
  for (const std::string& m : drop) {
    if (!ck.model.has_encoder(m)) throw ConfigError("--drop: no modality '" + m + "' in the checkpoint");
    o.zeroed.push_back(m);
  }
  const json j = to_json(evaluate(ck.model, data, o));
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(out, j);
  }
  return kOk;
}

int ablate_cmd(const fs::path& config_path, const std::string& grid, const std::string& out) {
  const ExperimentConfig c = load_experiment_config(config_path);
  const std::vector<AblationArm> arms = select_arms(parse_grid(grid));
  const ExperimentData data = load_experiment_data(c);
  const std::vector<AblationRow> rows = run_ablation(c, data, arms);
  std::string csv = ablation_csv_header() + "\n";
  for (const AblationRow& r : rows) csv += ablation_csv_row(r) + "\n";
  write_text(out.empty() ? c.output_dir / "ablation.csv" : fs::path(out), csv);
  std::cout << csv;
  return kOk;
}

int sweep_cmd(const fs::path& config_path, const std::string& param, const std::string& range,
              const std::string& seeds_spec, const std::string& out) {
  const ExperimentConfig c = load_experiment_config(config_path);
  const SweepParam p = parse_sweep_param(param);
  std::vector<std::uint64_t> seeds;
  if (seeds_spec.empty()) {
    seeds.push_back(c.seed);
  } else {
    for (const int s : parse_range(seeds_spec)) {
      if (s < 0) throw ConfigError("--seeds must be non-negative");
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  const std::string csv = sweep_csv(p, run_sweep(c, p, parse_range(range), seeds));
  write_text(out.empty() ? c.output_dir / ("sweep_" + param + ".csv") : fs::path(out), csv);
  std::cout << csv;
  return kOk;
}

int inspect_cmd(const fs::path& checkpoint, const fs::path& manifest, int layer, const fs::path& out, int limit) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(manifest);
  const int first = ck.model.first_prompted_layer();
  if (layer < first || layer >= ck.model.config().backbone.n_layers) {
    throw ConfigError("--layer must be a prompted layer in [" + std::to_string(first) + ", " +
                      std::to_string(ck.model.config().backbone.n_layers - 1) + "]");
  }
  FusionOptions o = ck.fusion;
  o.use_pafis = true;
  fs::create_directories(out);
  json index = json::array();
  const std::size_t n = limit < 0 ? data.samples.size() : std::min(data.samples.size(), static_cast<std::size_t>(limit));
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = data.samples[i];
    std::vector<LayerTrace> trace;
    Tape tape;
    ck.model.forward(tape, s, o, nullptr, &trace);
    const LayerTrace& lt = trace.at(static_cast<std::size_t>(layer - first));
    const std::string stem = "sample" + std::to_string(s.id) + "_layer" + std::to_string(layer);
    json mods = json::array();
    for (std::size_t k = 0; k < lt.selections.size(); ++k) {
      const SelectionMap& sel = lt.selections[k];
      const std::string& name = lt.modality_order[k];
      write_text(out / (stem + "_" + name + "_K.csv"), csv_matrix(sel.corr));
      mods.push_back({{"modality", name},
                      {"aligned", sel.aligned},
                      {"width", sel.width},
                      {"k_max", sel.k_max},
                      {"k_min", sel.k_min},
                      {"K", stem + "_" + name + "_K.csv"}});
    }
    write_text(out / (stem + "_prompt.csv"), csv_matrix(lt.prompt));
    const json entry = {{"sample", s.id},
                        {"layer", layer},
                        {"attention_len", lt.attention_len},
                        {"prompt", stem + "_prompt.csv"},
                        {"modalities", mods}};
    write_json(out / (stem + "_selection.json"), entry);
    index.push_back(entry);
  }
  write_json(out / "index.json", index);
  std::cout << "wrote " << n << " samples to " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt tuning of a frozen toy transformer with parameter-free multimodal prompts"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data, grid = "pafis,modalities,test-drop", param, range, seeds;
  std::vector<std::string> drop;
  int layer = -1;
  int limit = 8;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train prompts, encoders and head");
  tr->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Split manifest")->required();
  ev->add_option("--drop", drop, "Zero this modality at inference (repeatable)");
  ev->add_option("--out", out, "Write the metric report here instead of stdout");

  auto* ab = app.add_subcommand("ablate", "Run the ablation grid");
  ab->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  ab->add_option("--grid", grid, "Dimensions: pafis,modalities,test-drop");
  ab->add_option("--out", out, "CSV path (default <output_dir>/ablation.csv)");

  auto* sw = app.add_subcommand("sweep", "Sweep prompt length or depth");
  sw->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sw->add_option("--param", param, "prompt_length or prompt_depth")->required();
  sw->add_option("--range", range, "Values, e.g. 2..16 or 1,3,6")->required();
  sw->add_option("--seeds", seeds, "Seeds, e.g. 0..4 (default: config seed)");
  sw->add_option("--out", out, "CSV path (default <output_dir>/sweep_<param>.csv)");

  auto* ic = app.add_subcommand("inspect-corr", "Dump correlation maps, selections and prompts");
  ic->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ic->add_option("--data", data, "Split manifest")->required();
  ic->add_option("--layer", layer, "Prompted layer index")->required();
  ic->add_option("--out", out, "Output directory")->required();
  ic->add_option("--limit", limit, "Number of samples (-1 for all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return gen_data(config, out);
    if (tr->parsed()) return train_cmd(config, out);
    if (ev->parsed()) return eval_cmd(checkpoint, data, drop, out);
    if (ab->parsed()) return ablate_cmd(config, grid, out);
    if (sw->parsed()) return sweep_cmd(config, param, range, seeds, out);
    if (ic->parsed()) return inspect_cmd(checkpoint, data, layer, out, limit);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const FrozenViolation& e) {
    std::cerr << "frozen backbone violated: " << e.what() << '\n';
    return kFrozen;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
