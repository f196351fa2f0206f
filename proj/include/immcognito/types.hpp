#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace immcognito {

using Point3 = std::array<double, 3>;

// One radar return. `t` is the 1-based frame index (or raw reception order
// before bucketing).
struct RawPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  int t = 1;

  Point3 xyz() const { return {x, y, z}; }
  bool operator==(const RawPoint&) const = default;
};

// One labeled gesture recording, points in reception order.
struct Sequence {
  std::string id;
  int subject = 0;
  int gesture = 0;
  std::vector<RawPoint> points;

  bool operator==(const Sequence&) const = default;
};

// Canonical F x P x 3 point array, frame-major. Coordinates are stored as
// float32 so the binary grid format round-trips bit-exactly.
struct FrameGrid {
  int frames = 0;
  int points_per_frame = 0;
  std::vector<float> coords;
  std::string source_id;
  int subject = 0;
  int gesture = 0;

  FrameGrid() = default;
  FrameGrid(int f, int p) : frames(f), points_per_frame(p), coords(static_cast<std::size_t>(f) * p * 3, 0.0f) {}

  std::size_t num_points() const { return static_cast<std::size_t>(frames) * points_per_frame; }
  // 1-based frame index of node n.
  int frame_of(std::size_t n) const { return static_cast<int>(n / points_per_frame) + 1; }

  float& at(std::size_t n, int axis) { return coords[n * 3 + axis]; }
  float at(std::size_t n, int axis) const { return coords[n * 3 + axis]; }
  Point3 point(std::size_t n) const { return {coords[n * 3], coords[n * 3 + 1], coords[n * 3 + 2]}; }

  bool operator==(const FrameGrid&) const = default;
};

}  // namespace immcognito
