#include "immcognito/log.hpp"

#include <chrono>
#include <ctime>
#include <iostream>
#include <mutex>

namespace immcognito::log {

namespace {

std::mutex g_mutex;
std::ostream* g_extra = nullptr;
bool g_quiet = false;

const char* tag(Level level) {
  switch (level) {
    case Level::kInfo: return "INFO";
    case Level::kWarning: return "WARN";
    case Level::kError: return "ERROR";
  }
  return "?";
}

}  // namespace

void set_extra_sink(std::ostream* sink) {
  std::lock_guard lock(g_mutex);
  g_extra = sink;
}

void set_quiet(bool quiet) {
  std::lock_guard lock(g_mutex);
  g_quiet = quiet;
}

void write(Level level, std::string_view message) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%d %H:%M:%S", &tm);

  std::lock_guard lock(g_mutex);
  if (!g_quiet || level != Level::kInfo) std::clog << stamp << ' ' << tag(level) << ' ' << message << '\n';
  if (g_extra) *g_extra << stamp << ' ' << tag(level) << ' ' << message << std::endl;
}

}  // namespace immcognito::log
