#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace weakmil::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2, kCheckFailed = 3 };

// One `weakmil` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Flat key=value file. Blank lines and lines starting with '#' are ignored,
// a leading "--" on keys and surrounding quotes on values are stripped.
std::vector<std::pair<std::string, std::string>> read_config(const std::filesystem::path& path);

// Replaces `--config FILE` after the subcommand by one `--key=value` per
// entry, inserted ahead of the other flags so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace weakmil::cli
