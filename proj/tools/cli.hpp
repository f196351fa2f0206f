#pragma once

namespace immcognito::cli {

// Parses argv, runs one subcommand, returns the process exit status:
// 0 on success, 1 on a runtime failure, 2 on a usage error.
int dispatch(int argc, char** argv);

}  // namespace immcognito::cli
