#pragma once

#include <string>
#include <vector>

namespace msda::cli {

// Dispatches the subcommands (train, eval, infer, filter, synth, gradcheck,
// ablate). Returns the process exit code; never throws.
int run(const std::vector<std::string>& argv);

} // namespace msda::cli
