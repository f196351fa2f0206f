#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "immcognito/types.hpp"

namespace immcognito {

enum class BaselineMethod {
  kGaussian,
  kUniform,
  kRandomPerturb,
  kScale,
  kRotation,
  kFeatureObfuscation,
  kQuantization,
  kLaplacian,
  kKAnonymity,
};

BaselineMethod parse_baseline_method(std::string_view name);
std::string_view to_string(BaselineMethod method);
const std::vector<BaselineMethod>& all_baseline_methods();
// gaussian, uniform, random_perturb, scale, rotation.
bool is_point_level(BaselineMethod method);

// Parameters of every method; only the ones of `method` are read. The
// defaults give a visible but non-destructive change on synthetic data.
struct BaselineSpec {
  BaselineMethod method = BaselineMethod::kGaussian;
  double sigma = 0.05;         // gaussian std, m
  double amplitude = 0.05;     // uniform half-width, m
  double radius = 0.05;        // random_perturb displacement, m
  double scale = 0.1;          // scale factor drawn from U(1-s, 1+s)
  double theta_degrees = 15;   // rotation angle drawn from U(-theta, theta)
  double rho = 0.2;            // feature_obfuscation replacement probability
  double cell = 0.1;           // quantization grid, m
  double laplace_b = 0.2;      // laplacian scale, m
  int kappa = 4;               // k_anonymity group size
  std::uint64_t seed = 7;

  void validate() const;
  // Sets a parameter by name (sigma, amplitude, radius, scale, theta,
  // rho, cell, b, kappa); ConfigError on unknown names.
  void set(std::string_view name, double value);
};

// Frame layout and labels are preserved.
FrameGrid perturb(const FrameGrid& grid, const BaselineSpec& spec);
// Grid i uses the seed derived from (spec.seed, i).
std::vector<FrameGrid> perturb_all(std::span<const FrameGrid> grids, const BaselineSpec& spec);
// Rotation about the vertical (z) axis through the grid centroid.
FrameGrid rotate_about_vertical(const FrameGrid& grid, double radians);

}  // namespace immcognito
