#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddrnet/nn/gradcheck.hpp"

namespace ddrnet {

// Gradcheck fixtures shared by the command line and the acceptance run.
// Targets: every layer type, every block variant, the projection and the
// whole network on a 16^3 grid.
std::vector<std::string> gradcheck_targets();

struct TargetResult {
  std::string target;
  nn::GradcheckResult result;
  double seconds = 0.0;
};

// Throws ConfigError for an unknown target.
TargetResult run_gradcheck_target(const std::string& target, std::uint64_t seed = 1,
                                  const nn::GradcheckOptions& options = {.probes = 50});

}  // namespace ddrnet
