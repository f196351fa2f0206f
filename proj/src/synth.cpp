#include "immcognito/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "immcognito/errors.hpp"
#include "immcognito/rng.hpp"

namespace immcognito::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Triangle wave with period 1, range [-1, 1].
double triangle(double x) {
  const double frac = x - std::floor(x);
  return frac < 0.5 ? 4.0 * frac - 1.0 : 3.0 - 4.0 * frac;
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.subjects < 1 || spec.gestures < 1 || spec.sequences_per_cell < 1 || spec.frames < 1 ||
      spec.points_per_frame < 1)
    throw ConfigError("synthetic dataset counts must all be >= 1");
  if (spec.gestures > kMaxGestures)
    throw ConfigError("unsupported gesture count " + std::to_string(spec.gestures) + " (at most " +
                      std::to_string(kMaxGestures) + " built-in families)");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

SubjectProfile subject_profile(const SynthSpec& spec, int subject) {
  Rng rng(derive_seed(spec.seed, {0x5u, static_cast<std::uint64_t>(subject)}));
  SubjectProfile p;
  p.scale = uniform(rng, 0.8, 1.2);
  p.speed = uniform(rng, 0.8, 1.2);
  p.offset = {uniform(rng, -0.2, 0.2), uniform(rng, 1.2, 1.8), uniform(rng, -0.15, 0.15)};
  p.tremor_sigma = uniform(rng, 0.002, 0.01);
  p.tremor_rate = uniform(rng, 0.5, 1.5);
  p.tremor_phase = {uniform(rng, 0.0, kTwoPi), uniform(rng, 0.0, kTwoPi), uniform(rng, 0.0, kTwoPi)};
  return p;
}

Point3 trajectory(int gesture, double s) {
  switch (gesture) {
    case 0:  // line-swipe
      return {-0.25 + 0.5 * s, 0.0, 0.0};
    case 1:  // circle
      return {0.18 * std::sin(kTwoPi * s), 0.0, 0.18 * (1.0 - std::cos(kTwoPi * s))};
    case 2:  // push-pull
      return {0.0, -0.3 * std::sin(kPi * s), 0.0};
    case 3:  // zigzag
      return {-0.25 + 0.5 * s, 0.0, 0.1 * triangle(3.0 * s)};
    case 4:  // arc
      return {-0.25 * std::cos(kPi * s), 0.0, 0.25 * std::sin(kPi * s)};
    case 5:  // figure-eight
      return {0.2 * std::sin(kTwoPi * s), 0.0, 0.1 * std::sin(2.0 * kTwoPi * s)};
    case 6:  // raise-lower
      return {0.0, 0.0, 0.3 * std::sin(kPi * s)};
    case 7: {  // spiral
      const double r = 0.05 + 0.15 * s;
      const double a = 2.0 * kTwoPi * s;
      return {r * std::cos(a), -0.1 * s, r * std::sin(a)};
    }
    default:
      throw ConfigError("unknown gesture family " + std::to_string(gesture));
  }
}

double warped_phase(int frame, int frames, double speed) {
  if (frames <= 1) return 0.0;
  const double u = static_cast<double>(frame) / static_cast<double>(frames - 1);
  return std::pow(u, 1.0 / speed);
}

Point3 hand_template(int index, int count) {
  constexpr double kRadius = 0.05;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const double y = count == 1 ? 0.0 : 1.0 - 2.0 * (index + 0.5) / count;
  const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
  const double theta = golden * index;
  return {kRadius * r * std::cos(theta), kRadius * y, kRadius * r * std::sin(theta)};
}

Sequence generate_sequence(const SynthSpec& spec, const SubjectProfile& profile, int subject, int gesture,
                           int repetition, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const double sigma = spec.noise_sigma;
  Point3 shift{0.0, 0.0, 0.0};
  double amplitude = 1.0;
  if (sigma > 0.0) {
    for (double& v : shift) v = 2.0 * sigma * standard_normal(rng);
    amplitude = 1.0 + 5.0 * sigma * standard_normal(rng);
  }

  Sequence seq;
  seq.id = "s" + std::to_string(subject) + "-g" + std::to_string(gesture) + "-r" + std::to_string(repetition);
  seq.subject = subject;
  seq.gesture = gesture;
  seq.points.reserve(static_cast<std::size_t>(spec.frames) * spec.points_per_frame);
  for (int f = 0; f < spec.frames; ++f) {
    const Point3 center = trajectory(gesture, warped_phase(f, spec.frames, profile.speed));
    Point3 tremor;
    for (int a = 0; a < 3; ++a)
      tremor[a] = profile.tremor_sigma * std::sin(profile.tremor_rate * f + profile.tremor_phase[a]);
    for (int j = 0; j < spec.points_per_frame; ++j) {
      const Point3 local = hand_template(j, spec.points_per_frame);
      Point3 p;
      for (int a = 0; a < 3; ++a) {
        p[a] = profile.offset[a] + profile.scale * (amplitude * center[a] + local[a] + tremor[a]) + shift[a];
        if (sigma > 0.0) p[a] += sigma * standard_normal(rng);
      }
      seq.points.push_back({p[0], p[1], p[2], f + 1});
    }
  }
  return seq;
}

std::vector<Sequence> generate_dataset(const SynthSpec& spec) {
  validate(spec);
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(spec.subjects) * spec.gestures * spec.sequences_per_cell);
  std::uint64_t index = 0;
  for (int s = 0; s < spec.subjects; ++s) {
    const SubjectProfile profile = subject_profile(spec, s);
    for (int g = 0; g < spec.gestures; ++g) {
      for (int r = 0; r < spec.sequences_per_cell; ++r, ++index)
        out.push_back(generate_sequence(spec, profile, s, g, r, derive_seed(spec.seed, {0x9u, index})));
    }
  }
  return out;
}

SequenceFile generate_file(const SynthSpec& spec) {
  SequenceFile file;
  file.header = {spec.subjects, spec.gestures};
  file.sequences = generate_dataset(spec);
  return file;
}

}  // namespace immcognito::synth
