#pragma once

#include <ostream>
#include <string_view>

namespace immcognito::log {

enum class Level { kInfo, kWarning, kError };

// Lines go to stderr unless redirected. An extra sink (e.g. a run log file)
// receives a copy of every line.
void set_extra_sink(std::ostream* sink);
void set_quiet(bool quiet);

void write(Level level, std::string_view message);

inline void info(std::string_view message) { write(Level::kInfo, message); }
inline void warn(std::string_view message) { write(Level::kWarning, message); }
inline void error(std::string_view message) { write(Level::kError, message); }

}  // namespace immcognito::log
