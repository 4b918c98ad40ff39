#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlgm::cli {

inline constexpr int kConverged = 0;
inline constexpr int kNotConverged = 2;
inline constexpr int kInputError = 3;

/// Runs one command; args excludes the program name. Results go to `out`
/// unless --out is given, diagnostics and the iteration log to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlgm::cli
