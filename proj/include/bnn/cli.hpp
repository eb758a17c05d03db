#pragma once

#include <iosfwd>

namespace bnn {

/// Entry point of the `bnn` tool. Returns the process exit code; failures
/// print one line of the form `error: <category>: <message>` to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bnn
