#include "immcognito/baselines.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "immcognito/errors.hpp"
#include "immcognito/rng.hpp"

namespace immcognito {

namespace {

struct MethodName {
  BaselineMethod method;
  std::string_view name;
};

constexpr MethodName kNames[] = {
    {BaselineMethod::kGaussian, "gaussian"},
    {BaselineMethod::kUniform, "uniform"},
    {BaselineMethod::kRandomPerturb, "random_perturb"},
    {BaselineMethod::kScale, "scale"},
    {BaselineMethod::kRotation, "rotation"},
    {BaselineMethod::kFeatureObfuscation, "feature_obfuscation"},
    {BaselineMethod::kQuantization, "quantization"},
    {BaselineMethod::kLaplacian, "laplacian"},
    {BaselineMethod::kKAnonymity, "k_anonymity"},
};

Point3 centroid(const FrameGrid& g, std::size_t begin, std::size_t end) {
  Point3 c{0.0, 0.0, 0.0};
  for (std::size_t n = begin; n < end; ++n)
    for (int a = 0; a < 3; ++a) c[a] += g.at(n, a);
  for (double& v : c) v /= static_cast<double>(end - begin);
  return c;
}

double laplace(Rng& rng, double b) {
  double u;
  do u = uniform01(rng) - 0.5;
  while (u == -0.5);
  return -b * std::copysign(1.0, u) * std::log(1.0 - 2.0 * std::abs(u));
}

void add_noise(FrameGrid& g, Rng& rng, auto&& draw) {
  for (float& v : g.coords) v = static_cast<float>(v + draw(rng));
}

double squared_distance(const FrameGrid& g, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = static_cast<double>(g.at(a, k)) - g.at(b, k);
    s += d * d;
  }
  return s;
}

// Greedy micro-aggregation of one frame: the lowest-index ungrouped point
// and its kappa-1 nearest ungrouped points form a group; once fewer than
// 2*kappa points remain they form the last group.
void micro_aggregate(const FrameGrid& in, FrameGrid& out, std::size_t begin, std::size_t end, int kappa) {
  std::vector<std::size_t> free;
  for (std::size_t n = begin; n < end; ++n) free.push_back(n);
  const auto k = static_cast<std::size_t>(kappa);
  while (!free.empty()) {
    std::vector<std::size_t> group;
    if (free.size() < 2 * k) {
      group.swap(free);
    } else {
      const std::size_t seed = free.front();
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t i = 1; i < free.size(); ++i) dist.emplace_back(squared_distance(in, seed, free[i]), i);
      std::stable_sort(dist.begin(), dist.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::size_t> take{0};
      for (std::size_t i = 0; i + 1 < k; ++i) take.push_back(dist[i].second);
      std::sort(take.begin(), take.end());
      for (std::size_t i : take) group.push_back(free[i]);
      for (auto it = take.rbegin(); it != take.rend(); ++it) free.erase(free.begin() + static_cast<long>(*it));
    }
    Point3 c{0.0, 0.0, 0.0};
    for (std::size_t n : group)
      for (int a = 0; a < 3; ++a) c[a] += in.at(n, a);
    for (std::size_t n : group)
      for (int a = 0; a < 3; ++a) out.at(n, a) = static_cast<float>(c[a] / static_cast<double>(group.size()));
  }
}

}  // namespace

BaselineMethod parse_baseline_method(std::string_view name) {
  for (const MethodName& m : kNames)
    if (m.name == name) return m.method;
  throw ConfigError("unknown baseline method '" + std::string(name) + "'");
}

std::string_view to_string(BaselineMethod method) {
  for (const MethodName& m : kNames)
    if (m.method == method) return m.name;
  return "gaussian";
}

const std::vector<BaselineMethod>& all_baseline_methods() {
  static const std::vector<BaselineMethod> methods = [] {
    std::vector<BaselineMethod> out;
    for (const MethodName& m : kNames) out.push_back(m.method);
    return out;
  }();
  return methods;
}

bool is_point_level(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kGaussian:
    case BaselineMethod::kUniform:
    case BaselineMethod::kRandomPerturb:
    case BaselineMethod::kScale:
    case BaselineMethod::kRotation:
      return true;
    default:
      return false;
  }
}

void BaselineSpec::validate() const {
  auto nonneg = [](double v, const char* what) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be a finite value >= 0");
  };
  nonneg(sigma, "sigma");
  nonneg(amplitude, "amplitude");
  nonneg(radius, "radius");
  nonneg(laplace_b, "b");
  nonneg(theta_degrees, "theta");
  if (!(scale >= 0.0 && scale < 1.0)) throw ConfigError("scale must lie in [0, 1)");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(cell > 0.0) || !std::isfinite(cell)) throw ConfigError("quantization cell must be positive");
  if (kappa < 1) throw ConfigError("kappa must be >= 1");
}

void BaselineSpec::set(std::string_view name, double value) {
  if (name == "sigma") sigma = value;
  else if (name == "amplitude") amplitude = value;
  else if (name == "radius") radius = value;
  else if (name == "scale") scale = value;
  else if (name == "theta") theta_degrees = value;
  else if (name == "rho") rho = value;
  else if (name == "cell") cell = value;
  else if (name == "b") laplace_b = value;
  else if (name == "kappa") {
    if (value != std::floor(value)) throw ConfigError("kappa must be an integer");
    kappa = static_cast<int>(value);
  } else {
    throw ConfigError("unknown baseline parameter '" + std::string(name) + "'");
  }
}

FrameGrid rotate_about_vertical(const FrameGrid& grid, double radians) {
  FrameGrid out = grid;
  if (grid.num_points() == 0) return out;
  const Point3 c = centroid(grid, 0, grid.num_points());
  const double cs = std::cos(radians), sn = std::sin(radians);
  for (std::size_t n = 0; n < grid.num_points(); ++n) {
    const double x = grid.at(n, 0) - c[0];
    const double y = grid.at(n, 1) - c[1];
    out.at(n, 0) = static_cast<float>(c[0] + cs * x - sn * y);
    out.at(n, 1) = static_cast<float>(c[1] + sn * x + cs * y);
  }
  return out;
}

FrameGrid perturb(const FrameGrid& grid, const BaselineSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0xba5e, static_cast<std::uint64_t>(spec.method)}));
  FrameGrid out = grid;
  const std::size_t n_points = grid.num_points();
  const auto p = static_cast<std::size_t>(grid.points_per_frame);
  switch (spec.method) {
    case BaselineMethod::kGaussian:
      add_noise(out, rng, [&](Rng& r) { return spec.sigma * standard_normal(r); });
      break;
    case BaselineMethod::kUniform:
      add_noise(out, rng, [&](Rng& r) { return spec.amplitude * (2.0 * uniform01(r) - 1.0); });
      break;
    case BaselineMethod::kLaplacian:
      add_noise(out, rng, [&](Rng& r) { return laplace(r, spec.laplace_b); });
      break;
    case BaselineMethod::kRandomPerturb:
      for (std::size_t n = 0; n < n_points; ++n) {
        Point3 d;
        double norm;
        do {
          for (double& v : d) v = standard_normal(rng);
          norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        } while (norm == 0.0);
        for (int a = 0; a < 3; ++a) out.at(n, a) = static_cast<float>(grid.at(n, a) + spec.radius * d[a] / norm);
      }
      break;
    case BaselineMethod::kScale: {
      if (n_points == 0) break;
      const double factor = 1.0 - spec.scale + 2.0 * spec.scale * uniform01(rng);
      const Point3 c = centroid(grid, 0, n_points);
      for (std::size_t n = 0; n < n_points; ++n)
        for (int a = 0; a < 3; ++a) out.at(n, a) = static_cast<float>(c[a] + factor * (grid.at(n, a) - c[a]));
      break;
    }
    case BaselineMethod::kRotation: {
      const double theta = spec.theta_degrees * std::numbers::pi / 180.0;
      return rotate_about_vertical(grid, theta * (2.0 * uniform01(rng) - 1.0));
    }
    case BaselineMethod::kFeatureObfuscation:
      for (std::size_t begin = 0; begin < n_points; begin += p) {
        const Point3 c = centroid(grid, begin, begin + p);
        for (std::size_t n = begin; n < begin + p; ++n)
          if (uniform01(rng) < spec.rho)
            for (int a = 0; a < 3; ++a) out.at(n, a) = static_cast<float>(c[a]);
      }
      break;
    case BaselineMethod::kQuantization:
      for (float& v : out.coords) v = static_cast<float>(std::round(v / spec.cell) * spec.cell);
      break;
    case BaselineMethod::kKAnonymity:
      for (std::size_t begin = 0; begin < n_points; begin += p) micro_aggregate(grid, out, begin, begin + p, spec.kappa);
      break;
  }
  return out;
}

std::vector<FrameGrid> perturb_all(std::span<const FrameGrid> grids, const BaselineSpec& spec) {
  std::vector<FrameGrid> out;
  out.reserve(grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    BaselineSpec s = spec;
    s.seed = derive_seed(spec.seed, {i});
    out.push_back(perturb(grids[i], s));
  }
  return out;
}

}  // namespace immcognito
