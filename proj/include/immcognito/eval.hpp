#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "immcognito/model.hpp"
#include "immcognito/tensor.hpp"
#include "immcognito/types.hpp"

namespace immcognito {

struct Metrics {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  // Mean one-vs-rest ROC area over classes that have both positives and
  // negatives; NaN when no class qualifies.
  double auc_macro = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // rows = true, columns = predicted
};

// Predictions are row argmaxes, lowest class index on ties. Throws
// DomainError on an empty batch.
Metrics compute_metrics(const Mat& probs, std::span<const int> labels);

// Area under the ROC curve of `scores` for the given positive flags, by
// the rank-sum formula with midranks for ties. NaN without both classes.
double roc_auc(std::span<const double> scores, std::span<const bool> positive);

struct RocCurve {
  int label = 0;
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};
// One-vs-rest curves with a point per distinct score threshold, from
// (0, 0) to (1, 1). Classes lacking positives or negatives are skipped.
std::vector<RocCurve> roc_curves(const Mat& probs, std::span<const int> labels);
// CSV: class,fpr,tpr
void write_roc_csv(std::ostream& out, const std::vector<RocCurve>& curves);

struct ScoreRow {
  std::string task;     // "gesture" or "identity"
  std::string variant;  // "original" or the transform's name
  Metrics metrics;
  double mean_chamfer = 0.0;  // original vs variant cloud, 0 for "original"
  Mat probs;                  // per-sample class probabilities (not serialized)
};

struct Scorecard {
  std::vector<ScoreRow> rows;

  const ScoreRow& row(const std::string& task, const std::string& variant) const;
};

// Class probabilities of `params` for every grid, one row per grid.
Mat predict(std::span<const FrameGrid> grids, const ModelParams& params, const ModelConfig& config);

using GridTransform = std::function<FrameGrid(const FrameGrid& grid, std::size_t index)>;

// Evaluates G and U on the original grids and on transform(grid): four rows
// (gesture/identity x original/variant) plus the mean Chamfer distance
// between each original and transformed cloud.
Scorecard privacy_utility_report(const ModelParams& gesture, const ModelConfig& gesture_config,
                                 const ModelParams& identity, const ModelConfig& identity_config,
                                 std::span<const FrameGrid> test, const GridTransform& transform,
                                 const std::string& variant = "deidentified");

// Same with the trained autoencoder as the transform.
Scorecard privacy_utility_report(const ModelParams& gesture, const ModelConfig& gesture_config,
                                 const ModelParams& identity, const ModelConfig& identity_config,
                                 const ModelParams& autoencoder, const ModelConfig& autoencoder_config,
                                 std::span<const FrameGrid> test);

// JSON: {"averaging": {...}, "rows": [{task, variant, accuracy, f1_macro,
// auc_macro, confusion, mean_chamfer}, ...]}
std::string scorecard_json(const Scorecard& card);
Scorecard parse_scorecard_json(const std::string& text);
void write_scorecard(const std::filesystem::path& json_path, const Scorecard& card);
// CSV: task,variant,accuracy,f1_macro,auc_macro,mean_chamfer,confusion
// (confusion as rows joined by ';' and cells by ' ').
void write_scorecard_csv(std::ostream& out, const Scorecard& card);

// Mean Chamfer distance over all pairs of grids with different gestures.
double mean_inter_gesture_chamfer(std::span<const FrameGrid> grids);

}  // namespace immcognito
