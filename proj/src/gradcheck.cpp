#include "ddrnet/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "ddrnet/nn/instrument.hpp"

namespace ddrnet::nn {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Var()>& forward) {
  KinkRecorder recorder;
  RecordingScope scope(recorder);
  Var out = forward();
  if (out->value.size() != 1) throw ShapeError("gradcheck: forward must return a scalar");
  return {out->value[0], recorder.signature()};
}

}  // namespace

Var scalarize(const Var& output, std::uint64_t seed) {
  Rng rng(seed);
  return weighted_sum(output, random_tensor(output->value.shape(), rng));
}

GradcheckResult gradcheck(const std::function<Var()>& forward,
                          const std::vector<NamedParameter>& inputs,
                          const GradcheckOptions& options) {
  if (inputs.empty()) throw ConfigError("gradcheck: no inputs to probe");
  for (const auto& in : inputs) {
    in.var->requires_grad = true;
    in.var->zero_grad();
  }

  Evaluation base{};
  {
    KinkRecorder recorder;
    RecordingScope scope(recorder);
    Var out = forward();
    if (out->value.size() != 1) throw ShapeError("gradcheck: forward must return a scalar");
    base = {out->value[0], recorder.signature()};
    backward(out);
  }
  const Evaluation again = evaluate(forward);
  if (std::memcmp(&again.value, &base.value, sizeof(double)) != 0 || again.signature != base.signature) {
    throw NumericalError("gradcheck: non-deterministic forward (two evaluations differ)");
  }

  std::vector<Tensor> analytic;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& in : inputs) {
    analytic.push_back(in.var->has_grad() ? in.var->grad : Tensor(in.var->value.shape()));
    offsets.push_back(total);
    total += in.var->value.size();
  }

  Rng rng(options.seed);
  GradcheckResult result;
  std::set<std::size_t> used;
  const std::size_t target = std::min(options.probes, total);
  const std::size_t max_attempts = std::max<std::size_t>(target * options.attempt_factor, 1);
  std::size_t attempts = 0;
  while (result.probes < target && attempts < max_attempts) {
    ++attempts;
    const std::size_t flat = rng.index(total);
    if (!used.insert(flat).second) continue;
    const auto pos = std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1;
    const std::size_t which = static_cast<std::size_t>(pos);
    const std::size_t elem = flat - offsets[which];
    double& slot = inputs[which].var->value[elem];
    const double original = slot;

    slot = original + options.step;
    const Evaluation plus = evaluate(forward);
    slot = original - options.step;
    const Evaluation minus = evaluate(forward);
    slot = original;

    if (plus.signature != base.signature || minus.signature != base.signature) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * options.step);
    const double a = analytic[which][elem];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > result.max_rel_error || result.probes == 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst = inputs[which].name + "[" + std::to_string(elem) + "]";
    }
    ++result.probes;
  }
  if (result.probes < target) {
    throw NumericalError("gradcheck: only " + std::to_string(result.probes) + " of " +
                         std::to_string(target) + " probes landed on differentiable points");
  }
  return result;
}

}  // namespace ddrnet::nn
