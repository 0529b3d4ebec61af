#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace picdaq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// `picdaq simulate|acquire|serve|replay|selftest ...`. Exit code 0 on
/// success, 1 on runtime failure, 2 on usage errors.
int run(int argc, char** argv);

/// Same as above; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace picdaq::cli
