#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "immcognito/types.hpp"

namespace immcognito {

// Header record of a sequence file: declared label ranges.
struct DatasetHeader {
  int subjects = 0;
  int gestures = 0;
};

struct SequenceFile {
  DatasetHeader header;
  std::vector<Sequence> sequences;
};

// JSON-Lines sequence format. The first line is the header record
// {"format":"immcognito-seq","version":1,"subjects":S,"gestures":G}; every
// further non-blank line is one sequence.
SequenceFile read_sequence_file(const std::filesystem::path& path);
std::vector<Sequence> load_sequences(const std::filesystem::path& path);
void write_sequence_file(const std::filesystem::path& path, const SequenceFile& file);

// Splits a sequence into F frames by reception order. Frame i receives the
// points with indices in [floor(i*N/F), floor((i+1)*N/F)); t is rewritten to
// the 1-based frame index. Frames may be empty when N < F.
std::vector<std::vector<RawPoint>> bucket_frames(const Sequence& seq, int frames);

struct KMeansResult {
  std::vector<Point3> centers;
  std::vector<int> assignment;
  int iterations = 0;
};

// Lloyd's k-means with farthest-point seeding. The first center is drawn
// from `seed`; later centers are the points farthest from all chosen ones.
// All ties go to the lowest index. On return every non-empty cluster's
// center is the mean of the points in `assignment`.
KMeansResult kmeans(std::span<const Point3> points, int clusters, std::uint64_t seed, int max_iterations = 50);

// Grows a point set to `target` points by centroid-linkage agglomeration:
// the closest pair of active clusters is merged and the merged centroid is
// appended as a new point. When only one active cluster remains, all current
// points become singleton clusters again.
std::vector<Point3> agglomerative_upsample(std::span<const Point3> points, int target);

// Resamples one frame to exactly `target` points: identity when the size
// already matches, k-means centroids when larger, agglomerative insertion
// when smaller. An empty frame copies `previous` (the caller's resampled
// previous frame) or, without one, `target` copies of the origin.
std::vector<Point3> resample_frame(std::span<const Point3> frame, int target, std::uint64_t seed,
                                   std::span<const Point3> previous = {});

// Sequence -> canonical grid: bucket_frames, then resample_frame per frame.
FrameGrid to_frame_grid(const Sequence& seq, int frames, int points_per_frame, std::uint64_t seed);

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

// Stratified split over (gesture, subject) label pairs. Each stratum is
// shuffled with its own seed; round(fraction * N) items go to train overall,
// allocated by largest remainder across strata. Single-item strata are put
// in train and reported in `warnings`. Index lists are ascending.
SplitResult split_indices(std::span<const std::pair<int, int>> labels, double train_fraction, std::uint64_t seed);

template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_dataset(const std::vector<Item>& items, double train_fraction,
                                                              std::uint64_t seed,
                                                              std::vector<std::string>* warnings = nullptr) {
  std::vector<std::pair<int, int>> labels;
  labels.reserve(items.size());
  for (const Item& item : items) labels.emplace_back(item.gesture, item.subject);
  SplitResult split = split_indices(labels, train_fraction, seed);
  std::pair<std::vector<Item>, std::vector<Item>> out;
  for (std::size_t i : split.train) out.first.push_back(items[i]);
  for (std::size_t i : split.test) out.second.push_back(items[i]);
  if (warnings) *warnings = std::move(split.warnings);
  return out;
}

// Binary grid file (little-endian): magic "IMCG", version u32, count u32,
// F u32, P u32, then per grid subject u32, gesture u32 and F*P*3 float32.
void write_grid_file(const std::filesystem::path& path, std::span<const FrameGrid> grids);
std::vector<FrameGrid> read_grid_file(const std::filesystem::path& path);

}  // namespace immcognito
