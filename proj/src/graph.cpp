#include "immcognito/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "immcognito/errors.hpp"

namespace immcognito {

GraphMode parse_graph_mode(std::string_view name) {
  if (name == "temporal") return GraphMode::kTemporal;
  if (name == "within_frame") return GraphMode::kWithinFrame;
  if (name == "spatial_all") return GraphMode::kSpatialAll;
  throw ConfigError("unknown graph mode '" + std::string(name) + "'");
}

std::string_view to_string(GraphMode mode) {
  switch (mode) {
    case GraphMode::kTemporal: return "temporal";
    case GraphMode::kWithinFrame: return "within_frame";
    case GraphMode::kSpatialAll: return "spatial_all";
  }
  return "temporal";
}

namespace {

// Half-open node range [begin, end) holding the candidates of node i, plus
// whether i itself must be skipped.
struct CandidateRange {
  std::size_t begin;
  std::size_t end;
};

CandidateRange candidate_range(std::size_t num_nodes, std::size_t per_frame, std::size_t i, GraphMode mode) {
  const std::size_t frame = i / per_frame;  // 0-based
  switch (mode) {
    case GraphMode::kSpatialAll:
      return {0, num_nodes};
    case GraphMode::kWithinFrame:
      return {frame * per_frame, (frame + 1) * per_frame};
    case GraphMode::kTemporal:
      if (frame == 0) return {0, per_frame};
      return {(frame - 1) * per_frame, frame * per_frame};
  }
  return {0, 0};
}

}  // namespace

std::vector<int> candidate_set(std::size_t num_nodes, int points_per_frame, std::size_t i, GraphMode mode) {
  if (points_per_frame < 1 || i >= num_nodes) throw DomainError("candidate_set: node index out of range");
  const auto r = candidate_range(num_nodes, static_cast<std::size_t>(points_per_frame), i, mode);
  std::vector<int> out;
  for (std::size_t j = r.begin; j < r.end; ++j)
    if (j != i) out.push_back(static_cast<int>(j));
  return out;
}

std::vector<int> candidate_set(const FrameGrid& grid, std::size_t i) {
  return candidate_set(grid.num_points(), grid.points_per_frame, i, GraphMode::kTemporal);
}

TemporalGraph build_temporal_graph(const Mat& coords, int points_per_frame, int k, GraphMode mode) {
  if (k < 1) throw ConfigError("neighbor count k must be >= 1");
  if (coords.cols() != 3) throw DomainError("coordinates must be N x 3");
  const auto n = static_cast<std::size_t>(coords.rows());
  const auto per_frame = static_cast<std::size_t>(points_per_frame);
  if (per_frame < 1 || n % per_frame != 0) throw DomainError("node count must be a multiple of points per frame");

  TemporalGraph g;
  g.k = k;
  g.node_coords = coords;
  g.node_frame.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.node_frame[i] = static_cast<int>(i / per_frame) + 1;
  g.in_offsets.assign(n + 1, 0);
  g.edges.reserve(n * static_cast<std::size_t>(k));

  // Sorted insertion into a k-slot buffer ordered by (distance, index).
  std::vector<std::pair<double, int>> best;
  best.reserve(static_cast<std::size_t>(k) + 1);
  std::vector<int> sources;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = candidate_range(n, per_frame, i, mode);
    best.clear();
    const double xi = coords(i, 0), yi = coords(i, 1), zi = coords(i, 2);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      if (j == i) continue;
      const double dx = coords(j, 0) - xi, dy = coords(j, 1) - yi, dz = coords(j, 2) - zi;
      const double d = dx * dx + dy * dy + dz * dz;
      // Candidates arrive in ascending index order, so an equal distance
      // never displaces an earlier entry.
      if (best.size() == static_cast<std::size_t>(k) && !(d < best.back().first)) continue;
      auto pos = std::upper_bound(best.begin(), best.end(), d,
                                  [](double v, const std::pair<double, int>& e) { return v < e.first; });
      best.insert(pos, {d, static_cast<int>(j)});
      if (best.size() > static_cast<std::size_t>(k)) best.pop_back();
    }
    sources.clear();
    for (const auto& e : best) sources.push_back(e.second);
    std::sort(sources.begin(), sources.end());
    for (int s : sources) g.edges.push_back({s, static_cast<int>(i)});
    g.in_offsets[i + 1] = static_cast<int>(g.edges.size());
  }
  return g;
}

Mat grid_coords(const FrameGrid& grid) {
  Mat m(static_cast<Eigen::Index>(grid.num_points()), 3);
  for (std::size_t n = 0; n < grid.num_points(); ++n)
    for (int a = 0; a < 3; ++a) m(static_cast<Eigen::Index>(n), a) = grid.at(n, a);
  return m;
}

TemporalGraph build_temporal_graph(const FrameGrid& grid, int k, GraphMode mode) {
  return build_temporal_graph(grid_coords(grid), grid.points_per_frame, k, mode);
}

void write_edge_csv(std::ostream& out, const TemporalGraph& graph) {
  out << "dst,src,distance\n";
  out.precision(std::numeric_limits<double>::max_digits10);
  for (const Edge& e : graph.edges) {
    const double d = (graph.node_coords.row(e.src) - graph.node_coords.row(e.dst)).norm();
    out << e.dst << ',' << e.src << ',' << d << '\n';
  }
}

}  // namespace immcognito
