#include "immcognito/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "immcognito/errors.hpp"
#include "immcognito/log.hpp"
#include "immcognito/rng.hpp"

namespace immcognito {

namespace {

using nlohmann::json;

constexpr char kSequenceFormat[] = "immcognito-seq";
constexpr int kSequenceVersion = 1;
constexpr char kGridMagic[4] = {'I', 'M', 'C', 'G'};
constexpr std::uint32_t kGridVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

int require_int(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing \"") + key + "\"", line);
  if (!it->is_number_integer()) throw ParseError(std::string("\"") + key + "\" must be an integer", line);
  return it->get<int>();
}

Sequence parse_sequence(const json& obj, std::size_t line) {
  if (!obj.is_object()) throw ParseError("sequence record must be an object", line);
  Sequence seq;
  auto id = obj.find("id");
  if (id == obj.end() || !id->is_string()) throw ParseError("missing string \"id\"", line);
  seq.id = id->get<std::string>();
  seq.subject = require_int(obj, "subject", line);
  seq.gesture = require_int(obj, "gesture", line);
  auto pts = obj.find("points");
  if (pts == obj.end() || !pts->is_array()) throw ParseError("missing array \"points\"", line);
  seq.points.reserve(pts->size());
  for (const json& p : *pts) {
    if (!p.is_array() || p.size() != 4) throw ParseError("each point must be [x,y,z,t]", line);
    for (int a = 0; a < 3; ++a)
      if (!p[a].is_number()) throw ParseError("point coordinate must be a number", line);
    if (!p[3].is_number_integer()) throw ParseError("point frame index t must be an integer", line);
    RawPoint rp{p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<int>()};
    if (!std::isfinite(rp.x) || !std::isfinite(rp.y) || !std::isfinite(rp.z))
      throw ValidationError("line " + std::to_string(line) + ": non-finite coordinate");
    if (rp.t < 1) throw ValidationError("line " + std::to_string(line) + ": frame index t must be >= 1");
    seq.points.push_back(rp);
  }
  if (seq.points.empty()) throw ValidationError("line " + std::to_string(line) + ": sequence has no points");
  return seq;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError(path.string() + ": truncated grid file");
  return value;
}

}  // namespace

SequenceFile read_sequence_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sequence file: " + path.string());
  SequenceFile file;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!have_header) {
      auto fmt = obj.find("format");
      if (!obj.is_object() || fmt == obj.end() || *fmt != kSequenceFormat)
        throw ParseError("expected header record with \"format\":\"immcognito-seq\"", line);
      if (require_int(obj, "version", line) != kSequenceVersion) throw ParseError("unsupported version", line);
      file.header.subjects = require_int(obj, "subjects", line);
      file.header.gestures = require_int(obj, "gestures", line);
      if (file.header.subjects < 1 || file.header.gestures < 1)
        throw ValidationError("line " + std::to_string(line) + ": header label counts must be positive");
      have_header = true;
      continue;
    }
    Sequence seq = parse_sequence(obj, line);
    if (seq.subject < 0 || seq.subject >= file.header.subjects)
      throw ValidationError("line " + std::to_string(line) + ": subject " + std::to_string(seq.subject) +
                            " outside [0, " + std::to_string(file.header.subjects) + ")");
    if (seq.gesture < 0 || seq.gesture >= file.header.gestures)
      throw ValidationError("line " + std::to_string(line) + ": gesture " + std::to_string(seq.gesture) +
                            " outside [0, " + std::to_string(file.header.gestures) + ")");
    file.sequences.push_back(std::move(seq));
  }
  if (!have_header) throw ParseError("empty sequence file", line == 0 ? 1 : line);
  return file;
}

std::vector<Sequence> load_sequences(const std::filesystem::path& path) {
  return read_sequence_file(path).sequences;
}

void write_sequence_file(const std::filesystem::path& path, const SequenceFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write sequence file: " + path.string());
  json header = {{"format", kSequenceFormat},
                 {"version", kSequenceVersion},
                 {"subjects", file.header.subjects},
                 {"gestures", file.header.gestures}};
  out << header.dump() << '\n';
  for (const Sequence& seq : file.sequences) {
    json pts = json::array();
    for (const RawPoint& p : seq.points) pts.push_back(json::array({p.x, p.y, p.z, p.t}));
    json rec = {{"id", seq.id}, {"subject", seq.subject}, {"gesture", seq.gesture}, {"points", std::move(pts)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error("failed writing sequence file: " + path.string());
}

std::vector<std::vector<RawPoint>> bucket_frames(const Sequence& seq, int frames) {
  if (frames < 1) throw ConfigError("frame count must be >= 1");
  const std::size_t n = seq.points.size();
  const std::size_t f = static_cast<std::size_t>(frames);
  std::vector<std::vector<RawPoint>> out(f);
  for (std::size_t i = 0; i < f; ++i) {
    const std::size_t begin = i * n / f;
    const std::size_t end = (i + 1) * n / f;
    out[i].reserve(end - begin);
    for (std::size_t j = begin; j < end; ++j) {
      RawPoint p = seq.points[j];
      p.t = static_cast<int>(i) + 1;
      out[i].push_back(p);
    }
  }
  return out;
}

KMeansResult kmeans(std::span<const Point3> points, int clusters, std::uint64_t seed, int max_iterations) {
  const std::size_t n = points.size();
  const std::size_t k = static_cast<std::size_t>(clusters);
  if (clusters < 1 || n < k) throw DomainError("kmeans needs 1 <= clusters <= points");

  KMeansResult result;
  std::vector<char> chosen(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  Rng rng(seed);
  std::size_t pick = static_cast<std::size_t>(rng() % n);
  for (std::size_t c = 0; c < k; ++c) {
    chosen[pick] = 1;
    result.centers.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_distance(points[i], points[pick]));
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i] && nearest[i] > best) {
        best = nearest[i];
        pick = i;
      }
    }
  }

  result.assignment.assign(n, -1);
  std::vector<int> previous;
  for (int iter = 0; iter < max_iterations; ++iter) {
    previous = result.assignment;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(points[i], result.centers[c]);
        if (d < best) {
          best = d;
          arg = static_cast<int>(c);
        }
      }
      result.assignment[i] = arg;
    }
    result.iterations = iter + 1;
    if (iter > 0 && result.assignment == previous) break;
    std::vector<Point3> sums(k, Point3{0.0, 0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(result.assignment[i]);
      for (int a = 0; a < 3; ++a) sums[c][a] += points[i][a];
      ++counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its center
      for (int a = 0; a < 3; ++a) result.centers[c][a] = sums[c][a] / static_cast<double>(counts[c]);
    }
  }
  return result;
}

std::vector<Point3> agglomerative_upsample(std::span<const Point3> points, int target) {
  std::vector<Point3> out(points.begin(), points.end());
  if (out.empty()) throw DomainError("agglomerative_upsample needs at least one point");
  const auto want = static_cast<std::size_t>(target);

  struct Cluster {
    Point3 sum;
    double count;
    Point3 centroid() const { return {sum[0] / count, sum[1] / count, sum[2] / count}; }
  };
  std::vector<Cluster> active;
  while (out.size() < want) {
    if (active.size() < 2) {
      if (out.size() == 1) {
        out.push_back(out.front());
        continue;
      }
      active.clear();
      for (const Point3& p : out) active.push_back({p, 1.0});
    }
    std::size_t best_a = 0, best_b = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < active.size(); ++a) {
      const Point3 ca = active[a].centroid();
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double d = squared_distance(ca, active[b].centroid());
        if (d < best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    Cluster merged = active[best_a];
    for (int a = 0; a < 3; ++a) merged.sum[a] += active[best_b].sum[a];
    merged.count += active[best_b].count;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
    active[best_a] = merged;
    out.push_back(merged.centroid());
  }
  return out;
}

std::vector<Point3> resample_frame(std::span<const Point3> frame, int target, std::uint64_t seed,
                                   std::span<const Point3> previous) {
  if (target < 1) throw ConfigError("points per frame must be >= 1");
  const auto want = static_cast<std::size_t>(target);
  if (frame.size() == want) return {frame.begin(), frame.end()};
  if (frame.empty()) {
    if (previous.size() == want) return {previous.begin(), previous.end()};
    return std::vector<Point3>(want, Point3{0.0, 0.0, 0.0});
  }
  if (frame.size() > want) return kmeans(frame, target, seed).centers;
  return agglomerative_upsample(frame, target);
}

FrameGrid to_frame_grid(const Sequence& seq, int frames, int points_per_frame, std::uint64_t seed) {
  if (seq.points.empty()) throw DomainError("sequence " + seq.id + " has no points");
  FrameGrid grid(frames, points_per_frame);
  grid.source_id = seq.id;
  grid.subject = seq.subject;
  grid.gesture = seq.gesture;
  const auto buckets = bucket_frames(seq, frames);
  std::vector<Point3> previous;
  for (int f = 0; f < frames; ++f) {
    std::vector<Point3> frame;
    frame.reserve(buckets[f].size());
    for (const RawPoint& p : buckets[f]) frame.push_back(p.xyz());
    std::vector<Point3> sampled =
        resample_frame(frame, points_per_frame, derive_seed(seed, {static_cast<std::uint64_t>(f)}), previous);
    for (int j = 0; j < points_per_frame; ++j) {
      const std::size_t n = static_cast<std::size_t>(f) * points_per_frame + j;
      for (int a = 0; a < 3; ++a) grid.at(n, a) = static_cast<float>(sampled[j][a]);
    }
    previous = std::move(sampled);
  }
  return grid;
}

SplitResult split_indices(std::span<const std::pair<int, int>> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  SplitResult result;
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) strata[labels[i]].push_back(i);

  struct Alloc {
    std::vector<std::size_t>* members;
    std::size_t train;
    double remainder;
  };
  std::vector<Alloc> allocs;
  std::size_t assigned = 0;
  for (auto& [key, members] : strata) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second)}));
    // Fisher-Yates with our own index draw keeps the split library-independent.
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng() % i]);
    const double exact = train_fraction * static_cast<double>(members.size());
    Alloc a{&members, static_cast<std::size_t>(std::floor(exact)), exact - std::floor(exact)};
    if (members.size() == 1) {
      a.train = 1;
      a.remainder = -1.0;
      result.warnings.push_back("stratum (gesture " + std::to_string(key.first) + ", subject " +
                                std::to_string(key.second) + ") has a single sequence; assigned to train");
      log::warn(result.warnings.back());
    }
    assigned += a.train;
    allocs.push_back(a);
  }

  const auto target = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(labels.size())));
  std::vector<std::size_t> order(allocs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return allocs[a].remainder > allocs[b].remainder; });
  for (std::size_t idx : order) {
    if (assigned >= target) break;
    Alloc& a = allocs[idx];
    if (a.train < a.members->size() && a.remainder > 0.0) {
      ++a.train;
      ++assigned;
    }
  }

  for (const Alloc& a : allocs) {
    for (std::size_t i = 0; i < a.members->size(); ++i)
      (i < a.train ? result.train : result.test).push_back((*a.members)[i]);
  }
  std::sort(result.train.begin(), result.train.end());
  std::sort(result.test.begin(), result.test.end());
  return result;
}

void write_grid_file(const std::filesystem::path& path, std::span<const FrameGrid> grids) {
  std::uint32_t frames = grids.empty() ? 0u : static_cast<std::uint32_t>(grids.front().frames);
  std::uint32_t points = grids.empty() ? 0u : static_cast<std::uint32_t>(grids.front().points_per_frame);
  for (const FrameGrid& g : grids) {
    if (static_cast<std::uint32_t>(g.frames) != frames || static_cast<std::uint32_t>(g.points_per_frame) != points)
      throw ConfigError("all grids in a grid file must share F and P");
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write grid file: " + path.string());
    out.write(kGridMagic, 4);
    put<std::uint32_t>(out, kGridVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(grids.size()));
    put<std::uint32_t>(out, frames);
    put<std::uint32_t>(out, points);
    for (const FrameGrid& g : grids) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(g.subject));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(g.gesture));
      out.write(reinterpret_cast<const char*>(g.coords.data()),
                static_cast<std::streamsize>(g.coords.size() * sizeof(float)));
    }
    if (!out) throw Error("failed writing grid file: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<FrameGrid> read_grid_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open grid file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kGridMagic, 4) != 0) throw FormatError(path.string() + ": not a grid file");
  if (get<std::uint32_t>(in, path) != kGridVersion) throw FormatError(path.string() + ": unsupported grid version");
  const auto count = get<std::uint32_t>(in, path);
  const auto frames = get<std::uint32_t>(in, path);
  const auto points = get<std::uint32_t>(in, path);
  std::vector<FrameGrid> grids;
  grids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FrameGrid g(static_cast<int>(frames), static_cast<int>(points));
    g.subject = static_cast<int>(get<std::uint32_t>(in, path));
    g.gesture = static_cast<int>(get<std::uint32_t>(in, path));
    in.read(reinterpret_cast<char*>(g.coords.data()), static_cast<std::streamsize>(g.coords.size() * sizeof(float)));
    if (!in) throw FormatError(path.string() + ": truncated grid file");
    g.source_id = path.stem().string() + "#" + std::to_string(i);
    grids.push_back(std::move(g));
  }
  return grids;
}

}  // namespace immcognito
