#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fedstab {

// Full front end: flag parsing, env overrides, subcommand dispatch, artifact
// persistence. argv-style args without the program name. Errors go to `err`
// as one machine-readable JSON line and the exit code is nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedstab
