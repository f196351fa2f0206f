#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "immcognito/baselines.hpp"
#include "immcognito/config.hpp"
#include "immcognito/data.hpp"
#include "immcognito/errors.hpp"
#include "immcognito/eval.hpp"
#include "immcognito/gradcheck.hpp"
#include "immcognito/log.hpp"
#include "immcognito/params_io.hpp"
#include "immcognito/rng.hpp"
#include "immcognito/synth.hpp"
#include "immcognito/train.hpp"

namespace immcognito::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kPrecedence =
    "Settings resolve as built-in defaults < --config file < command-line flags.\n"
    "Every run writes config.resolved, run.log and its artifacts to a new\n"
    "directory <out>/<subcommand>-YYYYmmdd-HHMMSS.";

// Config keys exposed as flags, per subcommand.
const std::vector<std::string> kSynthKeys = {"subjects", "gestures", "sequences_per_cell", "synth_frames",
                                             "synth_points", "noise_sigma"};
const std::vector<std::string> kModelKeys = {"hidden", "message", "key_dim", "value_dim", "heads", "output_dim"};
const std::vector<std::string> kTrainKeys = {"eta0", "lambda", "decay_period", "patience", "batch_size",
                                             "adam_beta1", "adam_beta2", "adam_epsilon", "resume"};
const std::vector<std::string> kLossKeys = {"alpha", "beta", "gamma", "delta", "tau", "k",
                                            "graph_mode", "decoder_input", "deid_loss", "max_epochs"};
const std::vector<std::string> kBaselineKeys = {"method", "sigma", "amplitude", "radius", "scale",
                                                "theta", "rho", "cell", "laplace_b", "kappa"};

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Flags collected for one subcommand.
struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_file;
  bool no_temporal_edges = false;
  bool no_temporal_knn = false;
  bool no_max_pool = false;
  bool no_deid_loss = false;
  bool with_baselines = false;
  std::string sweep_param;
  std::string sweep_values;
};

Command& add_command(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands, const std::string& name,
                     const std::string& description, const std::vector<std::string>& keys) {
  commands.push_back(std::make_unique<Command>());
  Command& c = *commands.back();
  c.app = root.add_subcommand(name, description);
  c.app->footer(kPrecedence);
  c.app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  std::map<std::string, std::string> help;
  for (const ConfigField& f : config_fields()) help[f.key] = f.help;
  for (const std::string& key : concat({{"seed", "out"}, keys})) {
    c.options[key] = c.app->add_option(flag_name(key), c.values[key], help.at(key));
  }
  return c;
}

void add_ablation_flags(Command& c) {
  c.app->add_flag("--no-temporal-edges", c.no_temporal_edges, "build the graph within each frame only");
  c.app->add_flag("--no-temporal-knn", c.no_temporal_knn, "KNN over all frames by spatial distance only");
  c.app->add_flag("--no-max-pool", c.no_max_pool, "decoder input without the pooled global feature");
  c.app->add_flag("--no-deid-loss", c.no_deid_loss, "drop the identity term from the objective");
}

RunConfig resolve(const Command& c) {
  RunConfig config;
  if (!c.config_file.empty()) apply_config_file(config, c.config_file);
  for (const auto& [key, option] : c.options)
    if (option->count() > 0) set_config_value(config, key, c.values.at(key));
  if (c.no_temporal_edges) config.model.graph_mode = GraphMode::kWithinFrame;
  if (c.no_temporal_knn) config.model.graph_mode = GraphMode::kSpatialAll;
  if (c.no_max_pool) config.model.decoder_input = DecoderInput::kLocal;
  if (c.no_deid_loss) config.deid_loss = false;
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

fs::path make_run_dir(const fs::path& root, const std::string& name) {
  fs::create_directories(root);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = name + "-" + stamp;
  for (int n = 0;; ++n) {
    const fs::path dir = root / (n == 0 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir)) return dir;
  }
}

// A run directory with its log attached for the lifetime of the object.
class Run {
 public:
  Run(const RunConfig& config, const std::string& name) : dir_(make_run_dir(config.out, name)) {
    log_.open(dir_ / "run.log");
    log::set_extra_sink(&log_);
    write_config(config);
    log::info("run directory " + dir_.string());
  }
  ~Run() { log::set_extra_sink(nullptr); }
  Run(const Run&) = delete;
  Run& operator=(const Run&) = delete;

  const fs::path& dir() const { return dir_; }
  void write_config(const RunConfig& config) const { write_text(dir_ / "config.resolved", serialize_config(config)); }

 private:
  fs::path dir_;
  std::ofstream log_;
};

void require(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string("missing required input ") + flag);
  if (!fs::exists(path)) throw Error(std::string(flag) + ": no such file '" + path + "'");
}

struct LoadedModel {
  ModelParams params;
  ModelConfig config;
  std::map<std::string, std::string> metadata;
};

LoadedModel load_model(const std::string& path, const char* flag) {
  require(path, flag);
  ParamFile file = read_param_file(path);
  if (file.sections.empty()) throw FormatError(path + ": no parameter section");
  LoadedModel m{std::move(file.sections.front().params), model_config_from_metadata(file.metadata), file.metadata};
  check_shapes(m.params, m.config);
  return m;
}

std::map<std::string, std::string> with(std::map<std::string, std::string> meta,
                                        std::initializer_list<std::pair<const std::string, std::string>> extra) {
  for (const auto& [k, v] : extra) meta[k] = v;
  return meta;
}

int class_count(std::span<const Sample> a, std::span<const Sample> b, Task task) {
  int n = 0;
  for (auto part : {a, b})
    for (const Sample& s : part) n = std::max(n, label_of(s, task) + 1);
  return n;
}

std::string summary(const Scorecard& card) {
  std::ostringstream out;
  for (const ScoreRow& r : card.rows) {
    out << r.task << "/" << r.variant << ": accuracy " << r.metrics.accuracy << " f1 " << r.metrics.f1_macro;
    if (r.variant != "original") out << " chamfer " << r.mean_chamfer;
    out << "\n";
  }
  return out.str();
}

// ---- subcommands ----

void run_synth(RunConfig config) {
  config.finalize(config.synth.subjects);
  config.validate();
  Run run(config, "synth");
  const SequenceFile file = synth::generate_file(config.synth);
  write_sequence_file(run.dir() / "sequences.jsonl", file);
  log::info("wrote " + std::to_string(file.sequences.size()) + " sequences");
}

void run_preprocess(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.input, "--input");
  Run run(config, "preprocess");
  const std::vector<Sequence> sequences = load_sequences(config.input);
  std::vector<FrameGrid> grids;
  grids.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i)
    grids.push_back(to_frame_grid(sequences[i], config.frames, config.points, derive_seed(config.seed, {0x9e, i})));
  write_grid_file(run.dir() / "grids.imcg", grids);
  log::info("wrote " + std::to_string(grids.size()) + " grids");
}

void run_split(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.input, "--input");
  Run run(config, "split");
  const std::vector<FrameGrid> grids = read_grid_file(config.input);
  std::vector<std::string> warnings;
  auto [train_val, test] = split_dataset(grids, config.train_fraction, config.seed, &warnings);
  auto [train, val] = split_dataset(train_val, 1.0 - config.val_fraction, derive_seed(config.seed, {0x5a}), &warnings);
  for (const std::string& w : warnings) log::warn(w);
  write_grid_file(run.dir() / "train.imcg", train);
  write_grid_file(run.dir() / "val.imcg", val);
  write_grid_file(run.dir() / "test.imcg", test);
  log::info("split " + std::to_string(train.size()) + " train, " + std::to_string(val.size()) + " val, " +
            std::to_string(test.size()) + " test");
}

void run_train_classifier(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.train_set, "--train-set");
  const Task task = parse_task(config.task);
  Run run(config, "train-classifier");
  const auto train_grids = read_grid_file(config.train_set);
  std::vector<FrameGrid> val_grids;
  if (!config.val_set.empty()) {
    require(config.val_set, "--val-set");
    val_grids = read_grid_file(config.val_set);
  }
  const auto train = to_samples(train_grids);
  const auto val = to_samples(val_grids);
  const int classes = class_count(train, val, task);
  const ModelConfig model = config.classifier_model();
  TrainConfig tc = config.train;
  tc.max_epochs = config.classifier_epochs;

  std::optional<TrainingState> resume;
  if (!config.resume.empty()) {
    require(config.resume, "--resume");
    resume = load_checkpoint(config.resume);
  }
  std::ofstream history(run.dir() / "history.csv");
  write_classifier_history_header(history);
  const fs::path checkpoint = run.dir() / "checkpoint.imcp";
  auto hook = [&](const TrainingState& state, const ClassifierEpoch& row) {
    write_classifier_history_row(history, row);
    history.flush();
    save_checkpoint(checkpoint, state);
  };
  const ClassifierResult result =
      train_classifier(train, val, task, classes, model, tc, hook, resume ? &*resume : nullptr);
  save_params(run.dir() / "model.imcp", result.params,
              with(model_metadata(model), {{"kind", "classifier"},
                                           {"task", std::string(to_string(task))},
                                           {"classes", std::to_string(classes)},
                                           {"best_epoch", std::to_string(result.best_epoch)}}));
  log::info("best epoch " + std::to_string(result.best_epoch));
}

struct Frozen {
  LoadedModel gesture;
  LoadedModel identity;
};

Frozen load_frozen(const RunConfig& config) {
  Frozen f{load_model(config.gesture_model, "--gesture-model"), load_model(config.identity_model, "--identity-model")};
  if (!f.gesture.params.has_head || !f.identity.params.has_head)
    throw ConfigError("frozen models must be classifiers");
  return f;
}

struct AutoencoderRun {
  ModelParams params;
  std::size_t id_term_evaluations = 0;
};

AutoencoderRun train_autoencoder_into(const RunConfig& config, const Frozen& frozen, const fs::path& dir) {
  require(config.train_set, "--train-set");
  const auto train_grids = read_grid_file(config.train_set);
  std::vector<FrameGrid> val_grids;
  if (!config.val_set.empty()) {
    require(config.val_set, "--val-set");
    val_grids = read_grid_file(config.val_set);
  }
  const auto train = to_samples(train_grids);
  const auto val = to_samples(val_grids);

  std::optional<TrainingState> resume;
  if (!config.resume.empty()) {
    require(config.resume, "--resume");
    resume = load_checkpoint(config.resume);
  }
  std::ofstream history(dir / "history.csv");
  write_history_header(history);
  const fs::path checkpoint = dir / "checkpoint.imcp";
  auto hook = [&](const TrainingState& state, const AutoencoderEpoch& row) {
    write_history_row(history, row);
    history.flush();
    save_checkpoint(checkpoint, state);
  };
  const AutoencoderResult result = train_autoencoder(
      train, val, {frozen.gesture.params, frozen.gesture.config}, {frozen.identity.params, frozen.identity.config},
      config.weights, config.model, config.train, config.deid_loss, hook, resume ? &*resume : nullptr);
  save_params(dir / "autoencoder.imcp", result.params,
              with(model_metadata(config.model), {{"kind", "autoencoder"},
                                                  {"best_epoch", std::to_string(result.best_epoch)}}));
  log::info("best epoch " + std::to_string(result.best_epoch) + ", identity term evaluated " +
            std::to_string(result.id_term_evaluations) + " times");
  return {result.params, result.id_term_evaluations};
}

void run_train_autoencoder(RunConfig config) {
  const Frozen frozen = load_frozen(config);
  config.finalize(frozen.identity.params.num_classes());
  config.validate();
  Run run(config, "train-autoencoder");
  train_autoencoder_into(config, frozen, run.dir());
}

void run_deidentify(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.input, "--input");
  const LoadedModel ae = load_model(config.autoencoder_model, "--autoencoder-model");
  Run run(config, "deidentify");
  const auto grids = read_grid_file(config.input);
  std::vector<FrameGrid> out;
  out.reserve(grids.size());
  for (const FrameGrid& g : grids) out.push_back(autoencoder_forward(g, ae.params, ae.config));
  write_grid_file(run.dir() / "deidentified.imcg", out);
  log::info("de-identified " + std::to_string(out.size()) + " grids");
}

void run_evaluate(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.input, "--input");
  const LoadedModel model = load_model(config.model_path, "--model");
  if (!model.params.has_head) throw ConfigError("--model must be a classifier");
  auto task_it = model.metadata.find("task");
  const Task task = parse_task(task_it != model.metadata.end() ? task_it->second : config.task);
  Run run(config, "evaluate");
  const auto grids = read_grid_file(config.input);
  const Mat probs = predict(grids, model.params, model.config);
  std::vector<int> labels;
  for (const FrameGrid& g : grids) labels.push_back(task == Task::kGesture ? g.gesture : g.subject);
  Scorecard card;
  card.rows.push_back({std::string(to_string(task)), "original", compute_metrics(probs, labels), 0.0, probs});
  write_scorecard(run.dir() / "metrics.json", card);
  std::ostringstream roc;
  write_roc_csv(roc, roc_curves(probs, labels));
  write_text(run.dir() / "roc.csv", roc.str());
  log::info(summary(card));
}

GridTransform baseline_transform(const BaselineSpec& spec) {
  return [spec](const FrameGrid& grid, std::size_t index) {
    BaselineSpec s = spec;
    s.seed = derive_seed(spec.seed, {index});
    return perturb(grid, s);
  };
}

void run_baseline(RunConfig config) {
  config.finalize(0);
  config.validate();
  require(config.input, "--input");
  Run run(config, "baseline");
  const auto grids = read_grid_file(config.input);
  write_grid_file(run.dir() / "perturbed.imcg", perturb_all(grids, config.baseline));
  if (!config.gesture_model.empty() || !config.identity_model.empty()) {
    const Frozen frozen = load_frozen(config);
    const Scorecard card =
        privacy_utility_report(frozen.gesture.params, frozen.gesture.config, frozen.identity.params,
                               frozen.identity.config, grids, baseline_transform(config.baseline),
                               std::string(to_string(config.baseline.method)));
    write_scorecard(run.dir() / "scorecard.json", card);
    log::info(summary(card));
  }
}

Scorecard full_report(const RunConfig& config, const Frozen& frozen, const ModelParams& ae,
                      const ModelConfig& ae_config, bool with_baselines) {
  require(config.test_set, "--test-set");
  const auto test = read_grid_file(config.test_set);
  Scorecard card = privacy_utility_report(frozen.gesture.params, frozen.gesture.config, frozen.identity.params,
                                          frozen.identity.config, ae, ae_config, test);
  if (!with_baselines) return card;
  for (BaselineMethod method : all_baseline_methods()) {
    BaselineSpec spec = config.baseline;
    spec.method = method;
    const Scorecard b = privacy_utility_report(frozen.gesture.params, frozen.gesture.config, frozen.identity.params,
                                               frozen.identity.config, test, baseline_transform(spec),
                                               std::string(to_string(method)));
    for (const ScoreRow& r : b.rows)
      if (r.variant != "original") card.rows.push_back(r);
  }
  return card;
}

void run_report(RunConfig config, bool with_baselines) {
  const Frozen frozen = load_frozen(config);
  config.finalize(frozen.identity.params.num_classes());
  config.validate();
  const LoadedModel ae = load_model(config.autoencoder_model, "--autoencoder-model");
  Run run(config, "report");
  const Scorecard card = full_report(config, frozen, ae.params, ae.config, with_baselines);
  write_scorecard(run.dir() / "scorecard.json", card);
  log::info(summary(card));
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw ConfigError("--values needs at least one value");
  return out;
}

void run_sweep(RunConfig config, const std::string& param, const std::string& values_text) {
  const Frozen frozen = load_frozen(config);
  const std::vector<std::string> values = split_values(values_text);
  // Validate every point before any training starts.
  for (const std::string& v : values) {
    RunConfig c = config;
    set_config_value(c, param, v);
    c.finalize(frozen.identity.params.num_classes());
    c.validate();
  }
  config.finalize(frozen.identity.params.num_classes());
  Run run(config, "sweep-" + param);
  std::ostringstream table;
  table << param << ",gesture_original,gesture_deidentified,identity_original,identity_deidentified,mean_chamfer\n";
  for (const std::string& v : values) {
    RunConfig c = config;
    set_config_value(c, param, v);
    c.finalize(frozen.identity.params.num_classes());
    const fs::path dir = run.dir() / (param + "-" + v);
    fs::create_directory(dir);
    write_text(dir / "config.resolved", serialize_config(c));
    log::info("sweep point " + param + " = " + v);
    const AutoencoderRun ae = train_autoencoder_into(c, frozen, dir);
    const Scorecard card = full_report(c, frozen, ae.params, c.model, false);
    write_scorecard(dir / "scorecard.json", card);
    log::info(summary(card));
    table << v << "," << card.row("gesture", "original").metrics.accuracy << ","
          << card.row("gesture", "deidentified").metrics.accuracy << ","
          << card.row("identity", "original").metrics.accuracy << ","
          << card.row("identity", "deidentified").metrics.accuracy << ","
          << card.row("identity", "deidentified").mean_chamfer << "\n";
  }
  write_text(run.dir() / "sweep.csv", table.str());
}

bool run_gradcheck_command(RunConfig config) {
  config.finalize(0);
  Run run(config, "gradcheck");
  GradcheckOptions options;
  options.seed = config.seed;
  const GradcheckReport report = run_gradcheck(options);
  std::ostringstream text;
  write_gradcheck_report(text, report);
  write_text(run.dir() / "gradcheck.txt", text.str());
  std::cout << text.str();
  if (!report.passed()) log::error("gradient check failed");
  return report.passed();
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Identity obfuscation for temporal 3D point clouds."};
  app.footer(kPrecedence);
  app.require_subcommand(1, 1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

  std::vector<std::unique_ptr<Command>> commands;
  const auto ae_keys = concat({{"train_set", "val_set", "gesture_model", "identity_model"}, kModelKeys,
                               kTrainKeys, kLossKeys});

  Command& synth = add_command(app, commands, "synth", "generate the synthetic dataset", kSynthKeys);
  Command& preprocess =
      add_command(app, commands, "preprocess", "resample sequences into frame grids", {"input", "frames", "points"});
  Command& split =
      add_command(app, commands, "split", "stratified train/val/test split", {"input", "train_fraction", "val_fraction"});
  Command& train_cls = add_command(app, commands, "train-classifier", "train a gesture or identity classifier",
                                   concat({{"train_set", "val_set", "task", "classifier_k", "classifier_epochs"},
                                           kModelKeys, kTrainKeys}));
  Command& train_ae = add_command(app, commands, "train-autoencoder", "train the de-identifying autoencoder", ae_keys);
  add_ablation_flags(train_ae);
  Command& deid = add_command(app, commands, "deidentify", "run a trained autoencoder over a grid file",
                              {"input", "autoencoder_model"});
  Command& evaluate =
      add_command(app, commands, "evaluate", "score a classifier on a grid file", {"input", "model"});
  Command& baseline = add_command(app, commands, "baseline", "apply a perturbation baseline",
                                  concat({{"input", "gesture_model", "identity_model"}, kBaselineKeys}));
  Command& report = add_command(app, commands, "report", "privacy-utility scorecard on the test split",
                                concat({{"test_set", "gesture_model", "identity_model", "autoencoder_model"},
                                        kBaselineKeys}));
  report.app->add_flag("--with-baselines", report.with_baselines, "add a row pair per baseline method");
  Command& sweep = add_command(app, commands, "sweep", "train and score one autoencoder per parameter value",
                               concat({ae_keys, {"test_set"}}));
  add_ablation_flags(sweep);
  sweep.app->add_option("--param", sweep.sweep_param, "config key to sweep, e.g. beta or k")->required();
  sweep.app->add_option("--values", sweep.sweep_values, "comma-separated values")->required();
  Command& gradcheck = add_command(app, commands, "gradcheck", "finite-difference gradient check", {});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const CLI::App* active = &app;
    for (const auto& c : commands)
      if (c->app->parsed()) active = c->app;
    std::cerr << active->help() << "\nerror: " << e.what() << "\n";
    return 2;
  }
  log::set_quiet(quiet);

  try {
    if (synth.app->parsed()) run_synth(resolve(synth));
    else if (preprocess.app->parsed()) run_preprocess(resolve(preprocess));
    else if (split.app->parsed()) run_split(resolve(split));
    else if (train_cls.app->parsed()) run_train_classifier(resolve(train_cls));
    else if (train_ae.app->parsed()) run_train_autoencoder(resolve(train_ae));
    else if (deid.app->parsed()) run_deidentify(resolve(deid));
    else if (evaluate.app->parsed()) run_evaluate(resolve(evaluate));
    else if (baseline.app->parsed()) run_baseline(resolve(baseline));
    else if (report.app->parsed()) run_report(resolve(report), report.with_baselines);
    else if (sweep.app->parsed()) run_sweep(resolve(sweep), sweep.sweep_param, sweep.sweep_values);
    else if (gradcheck.app->parsed()) return run_gradcheck_command(resolve(gradcheck)) ? 0 : 1;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}

}  // namespace immcognito::cli
