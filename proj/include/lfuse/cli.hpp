#pragma once

#include <iosfwd>

namespace lfuse {

// Entry point of the `lfuse` tool. Returns 0 on success, 1 on a usage or
// configuration error, 2 on a runtime failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lfuse
