#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace partsynth {

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitUsage = 2, kExitDivergence = 3 };

/// Runs one CLI invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Stops a `serve` / `synth --serve` loop running in this process.
void request_serve_shutdown();

}  // namespace partsynth
