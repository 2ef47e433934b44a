#pragma once

#include <iosfwd>

namespace progvc::cli {

// Runs one command line. Returns 0 on success, 1 when the command failed and
// 2 on a usage error; failures print one "error: <kind>: <message>" line to err.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace progvc::cli
