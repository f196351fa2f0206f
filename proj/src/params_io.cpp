#include "immcognito/params_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "immcognito/errors.hpp"

namespace immcognito {

namespace {

constexpr char kMagic[4] = {'I', 'M', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, 4);
    return v;
  }
  std::string string() {
    const std::uint32_t n = u32();
    if (n > (1u << 26)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated parameter file");
  }
  [[noreturn]] void fail(const std::string& what) { throw FormatError(path_.string() + ": " + what); }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

// Empty parameter set whose tensor list matches `names`.
ModelParams skeleton_for(const std::vector<std::string>& names) {
  ModelParams p;
  for (const std::string& n : names) {
    if (n.rfind("decoder.", 0) == 0) p.has_decoder = true;
    if (n.rfind("head.", 0) == 0) p.has_head = true;
  }
  return p;
}

}  // namespace

const ModelParams& ParamFile::section(const std::string& name) const {
  for (const ParamSection& s : sections)
    if (s.name == name) return s.params;
  throw FormatError("parameter file has no section '" + name + "'");
}

bool ParamFile::has_section(const std::string& name) const {
  for (const ParamSection& s : sections)
    if (s.name == name) return true;
  return false;
}

void write_param_file(const std::filesystem::path& path, const ParamFile& file) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write parameter file: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    std::string meta;
    for (const auto& [k, v] : file.metadata) meta += k + "=" + v + "\n";
    put_string(out, meta);
    put_u32(out, static_cast<std::uint32_t>(file.sections.size()));
    std::vector<float> buffer;
    for (const ParamSection& section : file.sections) {
      put_string(out, section.name);
      const auto tensors = named_tensors(section.params);
      put_u32(out, static_cast<std::uint32_t>(tensors.size()));
      for (const auto& [name, t] : tensors) {
        put_string(out, name);
        put_u32(out, static_cast<std::uint32_t>(t->rows()));
        put_u32(out, static_cast<std::uint32_t>(t->cols()));
        buffer.resize(static_cast<std::size_t>(t->size()));
        for (Eigen::Index i = 0; i < t->size(); ++i) buffer[static_cast<std::size_t>(i)] = static_cast<float>(t->data()[i]);
        out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * 4));
      }
    }
    if (!out) throw Error("failed writing parameter file: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ParamFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open parameter file: " + path.string());
  Reader r(in, path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a parameter file");
  if (r.u32() != kVersion) r.fail("unsupported parameter file version");

  ParamFile file;
  std::istringstream meta(r.string());
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("malformed metadata line");
    file.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const std::uint32_t sections = r.u32();
  for (std::uint32_t s = 0; s < sections; ++s) {
    ParamSection section;
    section.name = r.string();
    const std::uint32_t count = r.u32();
    std::vector<std::string> names;
    std::vector<Mat> values;
    for (std::uint32_t t = 0; t < count; ++t) {
      names.push_back(r.string());
      const std::uint32_t rows = r.u32();
      const std::uint32_t cols = r.u32();
      std::vector<float> buffer(static_cast<std::size_t>(rows) * cols);
      r.read(buffer.data(), buffer.size() * 4);
      Mat m(rows, cols);
      for (std::size_t i = 0; i < buffer.size(); ++i) m.data()[i] = buffer[i];
      values.push_back(std::move(m));
    }
    section.params = skeleton_for(names);
    auto slots = named_tensors(section.params);
    if (slots.size() != names.size()) r.fail("tensor list does not match a known model layout");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].first != names[i]) r.fail("unexpected tensor '" + names[i] + "', wanted '" + slots[i].first + "'");
      *slots[i].second = std::move(values[i]);
    }
    file.sections.push_back(std::move(section));
  }
  return file;
}

void save_params(const std::filesystem::path& path, const ModelParams& params,
                 const std::map<std::string, std::string>& metadata) {
  ParamFile file;
  file.metadata = metadata;
  file.sections.push_back({"params", params});
  write_param_file(path, file);
}

ModelParams load_params(const std::filesystem::path& path) { return read_param_file(path).section("params"); }

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& config) {
  ModelParams p = load_params(path);
  check_shapes(p, config);
  return p;
}

std::string exact_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", value);
  return buf;
}

double parse_exact_double(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str()) throw FormatError("not a number: '" + text + "'");
  return v;
}

}  // namespace immcognito
