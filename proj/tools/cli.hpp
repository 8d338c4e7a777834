#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mica::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // runtime or I/O failure, failed ablation variant
  kUsage = 2,    // bad flags, unknown preset, invalid config
};

// Runs one command line (without the program name). Output goes to `out`,
// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "67,108,864"
std::string group_thousands(std::uint64_t n);
// Nearest million, e.g. "67M".
std::string millions_label(std::uint64_t n);

// Rows printed by param-count, also used by --json.
nlohmann::json param_count_table(const std::string& geometry, const std::string& method, std::size_t r);

}  // namespace mica::cli
