#pragma once

#include <cstddef>
#include <ostream>
#include <string_view>
#include <vector>

#include "immcognito/tensor.hpp"
#include "immcognito/types.hpp"

namespace immcognito {

// Which candidate set feeds the KNN search.
enum class GraphMode {
  kTemporal,     // previous frame; frame 1 uses its own peers
  kWithinFrame,  // same-frame peers only (no cross-frame edges)
  kSpatialAll,   // every other node, frame ignored
};

GraphMode parse_graph_mode(std::string_view name);
std::string_view to_string(GraphMode mode);

// Directed edge from neighbor `src` into `dst`.
struct Edge {
  int src = 0;
  int dst = 0;
  bool operator==(const Edge&) const = default;
};

// Edges are sorted by (dst, src); the incoming edges of node i occupy
// [in_offsets[i], in_offsets[i + 1]).
struct TemporalGraph {
  Mat node_coords;              // N x 3
  std::vector<int> node_frame;  // 1-based
  std::vector<Edge> edges;
  std::vector<int> in_offsets;  // N + 1
  int k = 0;

  std::size_t num_nodes() const { return node_frame.size(); }
  int in_degree(std::size_t i) const { return in_offsets[i + 1] - in_offsets[i]; }
};

// Candidate neighbor set of node i (ascending indices) for a frame-major
// layout with `points_per_frame` nodes per frame.
std::vector<int> candidate_set(std::size_t num_nodes, int points_per_frame, std::size_t i,
                               GraphMode mode = GraphMode::kTemporal);
std::vector<int> candidate_set(const FrameGrid& grid, std::size_t i);

// Each node i receives edges from the min(k, |C(i)|) candidates with the
// smallest Euclidean distance, ties to the lower source index. The result
// depends on coordinates only.
TemporalGraph build_temporal_graph(const Mat& coords, int points_per_frame, int k,
                                   GraphMode mode = GraphMode::kTemporal);
TemporalGraph build_temporal_graph(const FrameGrid& grid, int k, GraphMode mode = GraphMode::kTemporal);

// Debug dump: header `dst,src,distance`, one line per edge.
void write_edge_csv(std::ostream& out, const TemporalGraph& graph);

Mat grid_coords(const FrameGrid& grid);

}  // namespace immcognito
