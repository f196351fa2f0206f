#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "immcognito/baselines.hpp"
#include "immcognito/loss.hpp"
#include "immcognito/model.hpp"
#include "immcognito/synth.hpp"
#include "immcognito/train.hpp"

namespace immcognito {

// Every tunable of a run. Serialized as flat `key = value` lines.
struct RunConfig {
  std::uint64_t seed = 7;

  synth::SynthSpec synth;
  int frames = 32;            // grid frames F
  int points = 32;            // grid points per frame P
  double train_fraction = 0.7;
  double val_fraction = 0.2;  // share of the training split held out for validation

  ModelConfig model;          // autoencoder
  int classifier_k = 2;       // Temporal Graph KNN neighbors of G and U
  TrainConfig train;
  int classifier_epochs = 200;
  LossWeights weights;
  bool tau_auto = true;       // tau = 2 / S
  bool deid_loss = true;

  BaselineSpec baseline;

  std::string task = "gesture";

  // Inputs, recorded so a run is re-derivable from its config.resolved.
  std::string input;
  std::string train_set;
  std::string val_set;
  std::string test_set;
  std::string gesture_model;
  std::string identity_model;
  std::string autoencoder_model;
  std::string model_path;
  std::string resume;
  std::string out = "runs";  // parent of the timestamped run directories

  // Model config of the frozen classifiers (same widths, own k, temporal graph).
  ModelConfig classifier_model() const;
  // Propagates `seed` into the component configs and resolves tau for S subjects.
  void finalize(int subjects);
  void validate() const;
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// All keys in serialization order.
const std::vector<ConfigField>& config_fields();

// Sets one key; ConfigError on unknown keys or unparsable values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// Applies a `key = value` file (`#` starts a comment). ParseError with the
// line number on malformed lines or bad values.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

// Model widths stored alongside parameter files so they load standalone.
std::map<std::string, std::string> model_metadata(const ModelConfig& config);
ModelConfig model_config_from_metadata(const std::map<std::string, std::string>& metadata);

}  // namespace immcognito
