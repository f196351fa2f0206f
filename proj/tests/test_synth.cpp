#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "immcognito/data.hpp"
#include "immcognito/errors.hpp"
#include "immcognito/synth.hpp"

using namespace immcognito;
using namespace immcognito::synth;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Point3 mean_position(const Sequence& s) {
  Point3 m{0, 0, 0};
  for (const RawPoint& p : s.points) {
    m[0] += p.x;
    m[1] += p.y;
    m[2] += p.z;
  }
  for (double& v : m) v /= static_cast<double>(s.points.size());
  return m;
}

}  // namespace

TEST_CASE("dataset size") {
  SynthSpec spec;
  spec.frames = 2;
  spec.points_per_frame = 2;
  CHECK(generate_dataset(spec).size() == 1920);
}

TEST_CASE("same spec gives byte-identical files") {
  SynthSpec spec;
  spec.subjects = 3;
  spec.gestures = 2;
  spec.sequences_per_cell = 2;
  spec.frames = 4;
  spec.points_per_frame = 3;
  const fs::path dir = fs::temp_directory_path() / "immcognito-test-synth";
  fs::create_directories(dir);
  write_sequence_file(dir / "a.jsonl", generate_file(spec));
  write_sequence_file(dir / "b.jsonl", generate_file(spec));
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
}

TEST_CASE("noise-free subjects differ by their profile transform") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.frames = 6;
  spec.points_per_frame = 4;
  const int gesture = 3;
  for (int subject : {0, 5}) {
    const SubjectProfile prof = subject_profile(spec, subject);
    const Sequence seq = generate_sequence(spec, prof, subject, gesture, 0, 1);
    REQUIRE(seq.points.size() == 24);
    for (int f = 0; f < spec.frames; ++f) {
      const Point3 c = trajectory(gesture, warped_phase(f, spec.frames, prof.speed));
      for (int j = 0; j < spec.points_per_frame; ++j) {
        const Point3 local = hand_template(j, spec.points_per_frame);
        const RawPoint& p = seq.points[static_cast<std::size_t>(f * spec.points_per_frame + j)];
        const double got[3] = {p.x, p.y, p.z};
        for (int a = 0; a < 3; ++a) {
          const double tremor = prof.tremor_sigma * std::sin(prof.tremor_rate * f + prof.tremor_phase[a]);
          CHECK(got[a] == doctest::Approx(prof.offset[a] + prof.scale * (c[a] + local[a] + tremor)).epsilon(1e-12));
        }
        CHECK(p.t == f + 1);
      }
    }
  }
}

TEST_CASE("noise-free cells are identical") {
  SynthSpec spec;
  spec.noise_sigma = 0.0;
  spec.subjects = 2;
  spec.gestures = 2;
  spec.sequences_per_cell = 3;
  spec.frames = 4;
  spec.points_per_frame = 3;
  const auto seqs = generate_dataset(spec);
  CHECK(seqs[0].points == seqs[1].points);
  CHECK(seqs[1].points == seqs[2].points);
  CHECK_FALSE(seqs[0].points == seqs[3].points);
}

TEST_CASE("profiles stay in their ranges") {
  SynthSpec spec;
  for (int s = 0; s < 32; ++s) {
    const SubjectProfile p = subject_profile(spec, s);
    CHECK((p.scale >= 0.8 && p.scale <= 1.2));
    CHECK((p.speed >= 0.8 && p.speed <= 1.2));
    CHECK(p.tremor_sigma >= 0.0);
  }
}

TEST_CASE("nearest-centroid on mean position beats chance for subjects") {
  SynthSpec spec;
  spec.sequences_per_cell = 10;
  spec.frames = 8;
  spec.points_per_frame = 8;
  const auto seqs = generate_dataset(spec);
  // Centroids from even repetitions, scored on odd ones.
  std::vector<Point3> sum(static_cast<std::size_t>(spec.subjects), Point3{0, 0, 0});
  std::vector<int> count(static_cast<std::size_t>(spec.subjects), 0);
  for (std::size_t i = 0; i < seqs.size(); i += 2) {
    const Point3 m = mean_position(seqs[i]);
    for (int a = 0; a < 3; ++a) sum[static_cast<std::size_t>(seqs[i].subject)][a] += m[a];
    ++count[static_cast<std::size_t>(seqs[i].subject)];
  }
  int correct = 0, total = 0;
  for (std::size_t i = 1; i < seqs.size(); i += 2) {
    const Point3 m = mean_position(seqs[i]);
    int best = 0;
    double best_d = 1e300;
    for (int s = 0; s < spec.subjects; ++s) {
      double d = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double c = sum[static_cast<std::size_t>(s)][a] / count[static_cast<std::size_t>(s)];
        d += (m[a] - c) * (m[a] - c);
      }
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    correct += best == seqs[i].subject;
    ++total;
  }
  CHECK(static_cast<double>(correct) / total > 1.0 / spec.subjects);
}

TEST_CASE("invalid specs") {
  SynthSpec spec;
  spec.gestures = 9;
  CHECK_THROWS_AS(generate_dataset(spec), ConfigError);
  spec.gestures = 6;
  spec.noise_sigma = -1.0;
  CHECK_THROWS_AS(validate(spec), ConfigError);
  spec.noise_sigma = 0.01;
  spec.subjects = 0;
  CHECK_THROWS_AS(validate(spec), ConfigError);
}

TEST_CASE("phase warp is monotone and spans the gesture") {
  for (double speed : {0.8, 1.0, 1.2}) {
    CHECK(warped_phase(0, 10, speed) == 0.0);
    CHECK(warped_phase(9, 10, speed) == 1.0);
    for (int f = 1; f < 10; ++f) CHECK(warped_phase(f, 10, speed) > warped_phase(f - 1, 10, speed));
  }
}
