#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "immcognito/loss.hpp"
#include "immcognito/model.hpp"
#include "immcognito/types.hpp"

namespace immcognito {

struct TrainConfig {
  double eta0 = 0.001;     // initial learning rate
  double lambda = 0.5;     // step-decay factor
  int decay_period = 20;   // epochs per decay step, T
  int patience = 100;      // early-stopping patience, epochs
  int batch_size = 32;     // M
  int max_epochs = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 7;

  void validate() const;
};

// Keeps freed training buffers in the heap instead of returning them to the
// OS between passes (glibc only; a no-op elsewhere). Idempotent.
void tune_allocator();

// eta0 * lambda^floor(epoch / T).
double lr_at(int epoch, const TrainConfig& config);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

// Adam with bias correction. Parameters and moments are rounded to float32
// after every step so checkpoints are exact.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& config);
AdamState make_adam_state(const ModelParams& params);

// Tracks the best monitored value; stops after `patience` epochs without a
// strict improvement.
struct EarlyStopping {
  int patience = 100;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stale_epochs = 0;

  // Returns true when `value` is a new best.
  bool observe(int epoch, double value);
  bool should_stop() const { return stale_epochs >= patience; }
};

// A grid converted once to double coordinates.
struct Sample {
  Mat coords;
  int points_per_frame = 0;
  int subject = 0;
  int gesture = 0;
};
Sample to_sample(const FrameGrid& grid);
std::vector<Sample> to_samples(std::span<const FrameGrid> grids);

enum class Task { kGesture, kIdentity };
Task parse_task(std::string_view name);
std::string_view to_string(Task task);
inline int label_of(const Sample& s, Task task) { return task == Task::kGesture ? s.gesture : s.subject; }

// Everything needed to continue an interrupted run bit-identically.
struct TrainingState {
  ModelParams params;
  ModelParams best_params;
  AdamState adam;
  EarlyStopping stopper;
  int next_epoch = 0;
  // Autoencoder only: validation identification accuracy of `params`,
  // i.e. A_id at the start of `next_epoch`.
  double id_accuracy = std::numeric_limits<double>::quiet_NaN();
  bool finished = false;
};

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_checkpoint(const std::filesystem::path& path);

// --- classifier pretraining ----------------------------------------------

struct ClassifierEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct ClassifierResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<ClassifierEpoch> history;
  int best_epoch = -1;
  TrainingState state;
};

using ClassifierEpochHook = std::function<void(const TrainingState&, const ClassifierEpoch&)>;

struct ClassifierEval {
  double loss = 0.0;
  double accuracy = 0.0;
};
ClassifierEval evaluate_classifier(std::span<const Sample> samples, Task task, const ModelParams& params,
                                   const ModelConfig& config);

// Minimizes the head's NLL with Adam and the step-decay schedule. Stops early
// on validation loss. `resume` continues from a saved state.
ClassifierResult train_classifier(std::span<const Sample> train, std::span<const Sample> val, Task task,
                                  int num_classes, const ModelConfig& model_config, const TrainConfig& train_config,
                                  const ClassifierEpochHook& hook = {}, const TrainingState* resume = nullptr);

// --- autoencoder training -------------------------------------------------

struct FrozenClassifier {
  const ModelParams& params;
  const ModelConfig& config;
};

enum class LossSelector { kChamfer, kGesture, kDeid, kCombined };
LossSelector parse_loss_selector(std::string_view name);
std::string_view to_string(LossSelector selector);

struct BatchLoss {
  double l_point = 0.0;  // mean Chamfer
  double l_ges = 0.0;    // mean gesture NLL
  double l_id_nll = std::numeric_limits<double>::quiet_NaN();
  double l_id_stab = std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  bool id_evaluated = false;
  int gesture_correct = 0;
  int identity_correct = 0;
};

// Loss of one batch and, when `grads` is given, its exact gradient with
// respect to the autoencoder parameters (accumulated into `grads`). The
// gate is a constant; for kCombined the identity term is skipped entirely
// when gamma * gate == 0. Throws GradientError on non-finite values.
BatchLoss autoencoder_batch(std::span<const Sample* const> batch, const ModelParams& autoencoder,
                            const ModelConfig& ae_config, const FrozenClassifier& gesture,
                            const FrozenClassifier& identity, const LossWeights& weights, bool gate,
                            LossSelector selector, ModelParams* grads);

struct AutoencoderEpoch {
  int epoch = 0;
  double l_point = 0.0;
  double l_ges = 0.0;
  double l_id_stab = std::numeric_limits<double>::quiet_NaN();
  double a_id = 0.0;  // validation identification accuracy at epoch start
  bool gate = false;
  double lr = 0.0;
  double val_gesture_acc = 0.0;
  double val_loss = 0.0;
};

struct AutoencoderResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<AutoencoderEpoch> history;
  int best_epoch = -1;
  std::size_t id_term_evaluations = 0;
  TrainingState state;
};

using AutoencoderEpochHook = std::function<void(const TrainingState&, const AutoencoderEpoch&)>;

struct AutoencoderEval {
  double l_point = 0.0;
  double l_ges = 0.0;
  double l_id_stab = std::numeric_limits<double>::quiet_NaN();
  double id_accuracy = 0.0;
  double gesture_accuracy = 0.0;
  double loss = 0.0;
  bool gate = false;
};
// Validation pass. The identity term enters `loss` only when the gate
// computed from this pass's own identification accuracy is open.
AutoencoderEval evaluate_autoencoder(std::span<const Sample> samples, const ModelParams& autoencoder,
                                     const ModelConfig& ae_config, const FrozenClassifier& gesture,
                                     const FrozenClassifier& identity, const LossWeights& weights, bool deid_enabled,
                                     std::size_t* id_term_evaluations = nullptr);

// Trains the autoencoder against frozen classifiers. Per epoch, A_id is the
// frozen identity classifier's validation accuracy on de-identified outputs
// at the start of the epoch; the gate H(A_id - tau) is constant within the
// epoch. Frozen parameters are checksummed every epoch.
AutoencoderResult train_autoencoder(std::span<const Sample> train, std::span<const Sample> val,
                                    const FrozenClassifier& gesture, const FrozenClassifier& identity,
                                    const LossWeights& weights, const ModelConfig& ae_config,
                                    const TrainConfig& train_config, bool deid_enabled = true,
                                    const AutoencoderEpochHook& hook = {}, const TrainingState* resume = nullptr);

// History CSV: epoch,l_point,l_ges,l_id_stab,a_id,gate,lr,val_gesture_acc
void write_history_header(std::ostream& out);
void write_history_row(std::ostream& out, const AutoencoderEpoch& row);
void write_classifier_history_header(std::ostream& out);
void write_classifier_history_row(std::ostream& out, const ClassifierEpoch& row);

}  // namespace immcognito
