#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace protopaws::cli {

enum ExitCode : int {
    ok = 0,
    usage = 1,
    config = 2,
    data = 3,
    numeric = 4,
};

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `key = value` lines; '#' starts a comment, `[section]` headers are ignored,
/// surrounding quotes are stripped. Throws ConfigError when the file is missing
/// or a line is malformed.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

} // namespace protopaws::cli
