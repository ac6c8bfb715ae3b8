#ifndef IMPACTS_CLI_HPP
#define IMPACTS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace impacts::cli {

// Exit codes: 0 success, 1 validation/parse failure, 2 configuration
// error, 3 endpoint/transport failure, 4 internal numeric failure.
// Data goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace impacts::cli

#endif  // IMPACTS_CLI_HPP
