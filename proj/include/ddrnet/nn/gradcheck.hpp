#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ddrnet/nn/layers.hpp"

namespace ddrnet::nn {

struct GradcheckOptions {
  std::size_t probes = 100;
  double step = 1e-5;
  std::uint64_t seed = 1234;
  // Give up after probes * attempt_factor draws if too many land on kinks.
  std::size_t attempt_factor = 20;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  // Probes whose +/- step crossed a relu/pooling/projection switch.
  std::size_t skipped_kinks = 0;
  std::string worst;  // "name[offset]" of the worst probe
};

/// Central-difference check of the analytic gradient.
///
/// `forward` must rebuild the graph from the current values of `inputs` and
/// return a scalar node. Probes are drawn uniformly over all input scalars;
/// a probe is discarded when either perturbed forward takes a different
/// discrete branch than the unperturbed one (the function is not
/// differentiable there). Error per probe is |a - n| / max(1, |a|, |n|).
GradcheckResult gradcheck(const std::function<Var()>& forward,
                          const std::vector<NamedParameter>& inputs,
                          const GradcheckOptions& options = {});

// Scalarizes an arbitrary output with fixed random coefficients in [-1, 1).
Var scalarize(const Var& output, std::uint64_t seed);

}  // namespace ddrnet::nn
