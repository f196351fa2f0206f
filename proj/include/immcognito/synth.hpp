#pragma once

#include <cstdint>
#include <vector>

#include "immcognito/data.hpp"
#include "immcognito/types.hpp"

namespace immcognito::synth {

inline constexpr int kMaxGestures = 8;

struct SynthSpec {
  int subjects = 8;
  int gestures = 6;
  int sequences_per_cell = 40;
  int frames = 32;
  int points_per_frame = 32;
  // Per-point jitter in meters. Also scales sequence-level variation
  // (position shift 2*sigma, amplitude 5*sigma); zero makes every sequence
  // in a (subject, gesture) cell identical.
  double noise_sigma = 0.01;
  std::uint64_t seed = 7;
};

// Person-specific execution pattern. The tremor is a deterministic
// per-frame oscillation so it survives noise_sigma = 0.
struct SubjectProfile {
  double scale = 1.0;
  Point3 offset{0.0, 1.5, 0.0};
  double speed = 1.0;
  double tremor_sigma = 0.0;
  double tremor_rate = 1.0;
  Point3 tremor_phase{0.0, 0.0, 0.0};
};

void validate(const SynthSpec& spec);

SubjectProfile subject_profile(const SynthSpec& spec, int subject);

// Hand-center displacement (meters, relative to rest) of a gesture family at
// phase s in [0, 1]. Families: line-swipe, circle, push-pull, zigzag, arc,
// figure-eight, raise-lower, spiral.
Point3 trajectory(int gesture, double phase);

// Monotone phase warp u -> u^(1/speed).
double warped_phase(int frame, int frames, double speed);

// Fixed reflector layout around the hand center (Fibonacci sphere, 5 cm).
Point3 hand_template(int index, int count);

// One sequence with an explicit profile; `rng_seed` drives the noise only.
Sequence generate_sequence(const SynthSpec& spec, const SubjectProfile& profile, int subject, int gesture,
                           int repetition, std::uint64_t rng_seed);

// S * G * sequences_per_cell sequences, ordered by subject, gesture,
// repetition. Throws ConfigError when G exceeds the built-in families.
std::vector<Sequence> generate_dataset(const SynthSpec& spec);

SequenceFile generate_file(const SynthSpec& spec);

}  // namespace immcognito::synth
