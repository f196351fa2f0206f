#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "immcognito/model.hpp"

namespace immcognito {

// Binary parameter file (little-endian):
//   magic "IMCP", version u32,
//   metadata u32 length + UTF-8 "key=value\n" lines,
//   section count u32, then per section:
//     name (u32 length + bytes), tensor count u32, per tensor:
//       name (u32 length + bytes), rows u32, cols u32, rows*cols float32.
// Tensors follow the canonical order of named_tensors().
struct ParamSection {
  std::string name;
  ModelParams params;
};

struct ParamFile {
  std::map<std::string, std::string> metadata;
  std::vector<ParamSection> sections;

  const ModelParams& section(const std::string& name) const;
  bool has_section(const std::string& name) const;
};

void write_param_file(const std::filesystem::path& path, const ParamFile& file);
ParamFile read_param_file(const std::filesystem::path& path);

// Single-section convenience wrappers ("params").
void save_params(const std::filesystem::path& path, const ModelParams& params,
                 const std::map<std::string, std::string>& metadata = {});
ModelParams load_params(const std::filesystem::path& path);
// Loads and checks tensor shapes against `config` (ConfigError on mismatch).
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& config);

// Exact text form of a double (hex float).
std::string exact_double(double value);
double parse_exact_double(const std::string& text);

}  // namespace immcognito
