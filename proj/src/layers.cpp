#include "ddrnet/nn/layers.hpp"

#include <cmath>

namespace ddrnet::nn {

Var ParameterStore::create(const std::string& name, Tensor init) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
  }
  Var v = variable(std::move(init), "param");
  params_.push_back({name, v});
  return v;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

const NamedParameter& ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named " + name);
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Conv::Conv(ParameterStore& store, const std::string& name, const ConvSpec& spec, Rng& rng, Init init)
    : name_(name), spec_(spec) {
  spec_.validate();
  Tensor w(spec_.weight_shape());
  if (init == Init::HeNormal) {
    const double fan_in = static_cast<double>(spec_.in_channels * spec_.taps());
    const double stddev = std::sqrt(2.0 / fan_in);
    for (double& v : w.data()) v = rng.normal(0.0, stddev);
  }
  weight_ = store.create(name + ".weight", std::move(w));
  if (spec_.has_bias) bias_ = store.create(name + ".bias", Tensor(Shape{spec_.out_channels}));
}

Var Conv::operator()(const Var& x) const { return conv(x, weight_, bias_, spec_); }

}  // namespace ddrnet::nn
