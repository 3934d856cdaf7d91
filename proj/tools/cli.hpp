#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pkgscope::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success, 1 stage or runtime error, 2 bad usage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace pkgscope::cli
