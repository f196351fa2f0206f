#include "immcognito/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "immcognito/errors.hpp"
#include "immcognito/rng.hpp"

namespace immcognito {

ModelConfig RunConfig::classifier_model() const {
  ModelConfig c = model;
  c.k = classifier_k;
  c.graph_mode = GraphMode::kTemporal;
  c.decoder_input = DecoderInput::kGlobal;
  return c;
}

void RunConfig::finalize(int subjects) {
  synth.seed = seed;
  model.seed = derive_seed(seed, {0xa0});
  train.seed = derive_seed(seed, {0xa1});
  baseline.seed = derive_seed(seed, {0xa2});
  if (tau_auto && subjects > 0) weights.tau = default_tau(subjects);
}

void RunConfig::validate() const {
  synth::validate(synth);
  if (frames < 1 || points < 1) throw ConfigError("frames and points must be >= 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  if (classifier_k < 1) throw ConfigError("classifier_k must be >= 1");
  if (classifier_epochs < 0) throw ConfigError("classifier_epochs must be >= 0");
  model.validate();
  train.validate();
  weights.validate();
  baseline.validate();
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest text that reads back to the same value.
  for (int precision = 1; precision < 17; ++precision) {
    char shorter[40];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v))
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename Member>
ConfigField double_field(std::string key, std::string help, Member member) {
  return {key, std::move(help), [member](const RunConfig& c) { return format_double(member(c)); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
ConfigField int_field(std::string key, std::string help, Member member) {
  return {key, std::move(help), [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, key](RunConfig& c, const std::string& v) {
            member(c) = parse_int<std::remove_reference_t<decltype(member(c))>>(key, v);
          }};
}

template <typename Member>
ConfigField bool_field(std::string key, std::string help, Member member) {
  return {key, std::move(help),
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

std::vector<ConfigField> make_fields() {
  std::vector<ConfigField> f;
  f.push_back(int_field("seed", "base seed threaded through every component", [](auto& c) -> auto& { return c.seed; }));

  f.push_back(int_field("subjects", "synthetic subjects S", [](auto& c) -> auto& { return c.synth.subjects; }));
  f.push_back(int_field("gestures", "synthetic gestures G (<= 8)", [](auto& c) -> auto& { return c.synth.gestures; }));
  f.push_back(int_field("sequences_per_cell", "synthetic sequences per (subject, gesture)",
                        [](auto& c) -> auto& { return c.synth.sequences_per_cell; }));
  f.push_back(int_field("synth_frames", "frames sampled per synthetic sequence",
                        [](auto& c) -> auto& { return c.synth.frames; }));
  f.push_back(int_field("synth_points", "points per synthetic frame",
                        [](auto& c) -> auto& { return c.synth.points_per_frame; }));
  f.push_back(double_field("noise_sigma", "synthetic per-point noise, m",
                           [](auto& c) -> auto& { return c.synth.noise_sigma; }));

  f.push_back(int_field("frames", "grid frames F", [](auto& c) -> auto& { return c.frames; }));
  f.push_back(int_field("points", "grid points per frame P", [](auto& c) -> auto& { return c.points; }));
  f.push_back(double_field("train_fraction", "train share of the train/test split",
                           [](auto& c) -> auto& { return c.train_fraction; }));
  f.push_back(double_field("val_fraction", "validation share carved from the training split",
                           [](auto& c) -> auto& { return c.val_fraction; }));

  f.push_back(int_field("hidden", "node feature width d_h", [](auto& c) -> auto& { return c.model.hidden; }));
  f.push_back(int_field("message", "message width d_m", [](auto& c) -> auto& { return c.model.message; }));
  f.push_back(int_field("key_dim", "per-head query/key width d_k", [](auto& c) -> auto& { return c.model.key_dim; }));
  f.push_back(int_field("value_dim", "per-head value width d_v", [](auto& c) -> auto& { return c.model.value_dim; }));
  f.push_back(int_field("heads", "attention heads B", [](auto& c) -> auto& { return c.model.heads; }));
  f.push_back(int_field("output_dim", "aggregated width d_z", [](auto& c) -> auto& { return c.model.output_dim; }));
  f.push_back(int_field("k", "autoencoder Temporal Graph KNN neighbors", [](auto& c) -> auto& { return c.model.k; }));
  f.push_back({"graph_mode", "temporal, within_frame or spatial_all",
               [](const RunConfig& c) { return std::string(to_string(c.model.graph_mode)); },
               [](RunConfig& c, const std::string& v) { c.model.graph_mode = parse_graph_mode(v); }});
  f.push_back({"decoder_input", "global, global_and_local or local",
               [](const RunConfig& c) { return std::string(to_string(c.model.decoder_input)); },
               [](RunConfig& c, const std::string& v) { c.model.decoder_input = parse_decoder_input(v); }});
  f.push_back(int_field("classifier_k", "classifier Temporal Graph KNN neighbors",
                        [](auto& c) -> auto& { return c.classifier_k; }));

  f.push_back(double_field("eta0", "initial learning rate", [](auto& c) -> auto& { return c.train.eta0; }));
  f.push_back(double_field("lambda", "step-decay factor", [](auto& c) -> auto& { return c.train.lambda; }));
  f.push_back(int_field("decay_period", "epochs per decay step T", [](auto& c) -> auto& { return c.train.decay_period; }));
  f.push_back(int_field("patience", "early-stopping patience, epochs", [](auto& c) -> auto& { return c.train.patience; }));
  f.push_back(int_field("batch_size", "batch size M", [](auto& c) -> auto& { return c.train.batch_size; }));
  f.push_back(int_field("max_epochs", "autoencoder epoch cap", [](auto& c) -> auto& { return c.train.max_epochs; }));
  f.push_back(int_field("classifier_epochs", "classifier epoch cap",
                        [](auto& c) -> auto& { return c.classifier_epochs; }));
  f.push_back(double_field("adam_beta1", "Adam beta1", [](auto& c) -> auto& { return c.train.adam_beta1; }));
  f.push_back(double_field("adam_beta2", "Adam beta2", [](auto& c) -> auto& { return c.train.adam_beta2; }));
  f.push_back(double_field("adam_epsilon", "Adam epsilon", [](auto& c) -> auto& { return c.train.adam_epsilon; }));

  f.push_back(double_field("alpha", "reconstruction weight", [](auto& c) -> auto& { return c.weights.alpha; }));
  f.push_back(double_field("beta", "gesture-preservation weight", [](auto& c) -> auto& { return c.weights.beta; }));
  f.push_back(double_field("gamma", "de-identification weight", [](auto& c) -> auto& { return c.weights.gamma; }));
  f.push_back(double_field("delta", "offset of the stabilized identity term",
                           [](auto& c) -> auto& { return c.weights.delta; }));
  f.push_back({"tau", "gate threshold on identification accuracy, or 'auto' for 2/S",
               [](const RunConfig& c) { return c.tau_auto ? std::string("auto") : format_double(c.weights.tau); },
               [](RunConfig& c, const std::string& v) {
                 if (v == "auto") {
                   c.tau_auto = true;
                 } else {
                   c.weights.tau = parse_double("tau", v);
                   c.tau_auto = false;
                 }
               }});
  f.push_back(bool_field("deid_loss", "enable the de-identification term", [](auto& c) -> auto& { return c.deid_loss; }));

  f.push_back({"method", "baseline method",
               [](const RunConfig& c) { return std::string(to_string(c.baseline.method)); },
               [](RunConfig& c, const std::string& v) { c.baseline.method = parse_baseline_method(v); }});
  f.push_back(double_field("sigma", "gaussian std, m", [](auto& c) -> auto& { return c.baseline.sigma; }));
  f.push_back(double_field("amplitude", "uniform half-width, m", [](auto& c) -> auto& { return c.baseline.amplitude; }));
  f.push_back(double_field("radius", "random_perturb displacement, m", [](auto& c) -> auto& { return c.baseline.radius; }));
  f.push_back(double_field("scale", "scale spread s", [](auto& c) -> auto& { return c.baseline.scale; }));
  f.push_back(double_field("theta", "rotation range, degrees", [](auto& c) -> auto& { return c.baseline.theta_degrees; }));
  f.push_back(double_field("rho", "feature_obfuscation probability", [](auto& c) -> auto& { return c.baseline.rho; }));
  f.push_back(double_field("cell", "quantization cell, m", [](auto& c) -> auto& { return c.baseline.cell; }));
  f.push_back(double_field("laplace_b", "laplacian scale, m", [](auto& c) -> auto& { return c.baseline.laplace_b; }));
  f.push_back(int_field("kappa", "k_anonymity group size", [](auto& c) -> auto& { return c.baseline.kappa; }));

  f.push_back({"task", "gesture or identity", [](const RunConfig& c) { return c.task; },
               [](RunConfig& c, const std::string& v) {
                 parse_task(v);
                 c.task = v;
               }});
  auto path_field = [&](const char* key, const char* help, std::string RunConfig::*member) {
    f.push_back({key, help, [member](const RunConfig& c) { return c.*member; },
                 [member](RunConfig& c, const std::string& v) { c.*member = v; }});
  };
  path_field("input", "input file", &RunConfig::input);
  path_field("train_set", "training grid file", &RunConfig::train_set);
  path_field("val_set", "validation grid file", &RunConfig::val_set);
  path_field("test_set", "test grid file", &RunConfig::test_set);
  path_field("gesture_model", "frozen gesture classifier", &RunConfig::gesture_model);
  path_field("identity_model", "frozen identity classifier", &RunConfig::identity_model);
  path_field("autoencoder_model", "trained autoencoder", &RunConfig::autoencoder_model);
  path_field("model", "classifier to evaluate", &RunConfig::model_path);
  path_field("resume", "checkpoint to resume from", &RunConfig::resume);
  path_field("out", "output root", &RunConfig::out);
  return f;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = make_fields();
  return fields;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const ConfigField& f : config_fields())
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  for (const ConfigField& f : config_fields())
    if (f.key == key) return f.get(config);
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", number);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", number);
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), number);
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    apply_config_text(config, text.str());
  } catch (const ParseError& e) {
    std::string what = e.what();
    const std::string prefix = "line " + std::to_string(e.line()) + ": ";
    if (what.rfind(prefix, 0) == 0) what.erase(0, prefix.size());
    throw ParseError(path.string() + ": " + what, e.line());
  }
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const ConfigField& f : config_fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::map<std::string, std::string> model_metadata(const ModelConfig& c) {
  return {{"hidden", std::to_string(c.hidden)},
          {"message", std::to_string(c.message)},
          {"key_dim", std::to_string(c.key_dim)},
          {"value_dim", std::to_string(c.value_dim)},
          {"heads", std::to_string(c.heads)},
          {"output_dim", std::to_string(c.output_dim)},
          {"k", std::to_string(c.k)},
          {"graph_mode", std::string(to_string(c.graph_mode))},
          {"decoder_input", std::string(to_string(c.decoder_input))}};
}

ModelConfig model_config_from_metadata(const std::map<std::string, std::string>& m) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("parameter file lacks model metadata '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.hidden = parse_int<int>("hidden", get("hidden"));
    c.message = parse_int<int>("message", get("message"));
    c.key_dim = parse_int<int>("key_dim", get("key_dim"));
    c.value_dim = parse_int<int>("value_dim", get("value_dim"));
    c.heads = parse_int<int>("heads", get("heads"));
    c.output_dim = parse_int<int>("output_dim", get("output_dim"));
    c.k = parse_int<int>("k", get("k"));
    c.graph_mode = parse_graph_mode(get("graph_mode"));
    c.decoder_input = parse_decoder_input(get("decoder_input"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace immcognito
