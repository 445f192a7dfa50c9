#pragma once

#include <iosfwd>

namespace mecor::cli {

/// Entry point of the `mecor` tool. Returns 0 on success, 1 on a runtime
/// failure (diagnostic names the failing stage), 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mecor::cli
