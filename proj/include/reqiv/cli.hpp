#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reqiv::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 1 invalid input or usage, 2 estimation did not
// converge. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

// Hash of the resolved key=value configuration recorded in run metadata.
std::string config_hash(const std::vector<std::pair<std::string, std::string>>& resolved);

}  // namespace reqiv::cli
