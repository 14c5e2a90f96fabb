#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wordprobe {

/// Runs one `wordprobe` subcommand. Returns 0 on success and 2 on any error
/// (the message goes to `err` and names the offending path or value).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace wordprobe
