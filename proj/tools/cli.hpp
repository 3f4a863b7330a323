#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xmh::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kDiverged = 4,
};

// Runs one subcommand (synth | train | encode | eval). args excludes the
// program name. Diagnostics go to err, summaries and logs to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// `key = value` lines with `#` comments, expanded to `--key value` pairs.
std::vector<std::string> read_config(const std::string& path);

}  // namespace xmh::cli
