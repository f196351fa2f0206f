#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "immcognito/loss.hpp"
#include "immcognito/model.hpp"
#include "immcognito/train.hpp"

namespace immcognito {

struct GradcheckOptions {
  ModelConfig config = small_config();
  int frames = 2;
  int points_per_frame = 4;  // N = frames * points_per_frame
  int batch = 2;
  int subjects = 3;
  int gestures = 3;
  double step = 1e-4;       // central-difference step
  double tolerance = 1e-4;  // on the per-tensor relative error
  std::uint64_t seed = 7;
  // Test hook: alters the analytic gradient before comparison.
  std::function<void(ModelParams&)> tamper;

  static ModelConfig small_config();
};

struct TensorCheck {
  std::string loss;
  std::string tensor;
  double max_abs_error = 0.0;
  double relative_error = 0.0;  // max|a - f| / max(max|a|, max|f|, 1e-8)
  bool passed = false;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;
  bool delta_gradient_zero = false;  // gradients bit-identical across delta values
  double max_relative_error = 0.0;

  bool passed() const;
};

// Finite-difference check of every autoencoder tensor under each loss
// selector, plus the classifier-head objective on the classifier tensors.
GradcheckReport run_gradcheck(const GradcheckOptions& options);
void write_gradcheck_report(std::ostream& out, const GradcheckReport& report);

// Per-tensor relative error of an analytic gradient against a numeric one.
double relative_error(const Mat& analytic, const Mat& numeric);

}  // namespace immcognito
