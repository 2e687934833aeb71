#ifndef PTSP_CLI_HPP
#define PTSP_CLI_HPP

#include <string>
#include <vector>

namespace ptsp::cli {

/// Runs one subcommand. args excludes the program name. Returns 0 on
/// success, 1 on usage or validation errors, 2 on internal errors.
int dispatch(std::vector<std::string> args);

}  // namespace ptsp::cli

#endif
