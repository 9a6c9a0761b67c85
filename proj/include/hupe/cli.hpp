#pragma once

#include <iosfwd>

namespace hupe {

/// Entry point of the `hupe` command (train, enhance, eval, check, synth).
/// Returns the process exit code; 2 for usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hupe
