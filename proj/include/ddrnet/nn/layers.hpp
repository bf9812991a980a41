#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddrnet/nn/autograd.hpp"

namespace ddrnet::nn {

struct NamedParameter {
  std::string name;
  Var var;
};

/// Owns every learnable tensor of a model in construction order. The order
/// is what checkpoints and optimizers iterate over.
class ParameterStore {
 public:
  Var create(const std::string& name, Tensor init);

  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();
  const NamedParameter& find(const std::string& name) const;

 private:
  std::vector<NamedParameter> params_;
};

enum class Init { HeNormal, Zero };

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal(double mean, double stddev);
  double uniform(double lo, double hi);
  std::size_t index(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Tensor with i.i.d. entries in [lo, hi).
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

/// Convolution with its weight (and optional bias) registered in a store.
class Conv {
 public:
  Conv() = default;
  Conv(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng,
       Init init = Init::HeNormal);

  Var operator()(const Var& x) const;

  const ConvSpec& spec() const { return spec_; }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

}  // namespace ddrnet::nn
