#include "nightiq/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace nightiq {

ag::Var ParameterStore::add_parameter(const std::string& name, Tensor init) {
  if (params_.contains(name) || buffers_.contains(name)) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  auto var = ag::Var::parameter(std::move(init));
  params_.emplace(name, var);
  return var;
}

ag::Var ParameterStore::add_buffer(const std::string& name, Tensor init) {
  if (params_.contains(name) || buffers_.contains(name)) {
    throw std::logic_error("duplicate buffer name: " + name);
  }
  auto var = ag::Var::constant(std::move(init));
  buffers_.emplace(name, var);
  return var;
}

std::vector<ag::Var> ParameterStore::parameters_with_prefix(const std::string& prefix) const {
  std::vector<ag::Var> out;
  for (const auto& [name, var] : params_) {
    if (name.starts_with(prefix)) out.push_back(var);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, var] : params_) {
    ag::Var v = var;
    v.zero_grad();
  }
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, var] : params_) n += var.value().size();
  return n;
}

NamedArrays ParameterStore::snapshot() const {
  NamedArrays out;
  for (const auto& [name, var] : params_) out.emplace(name, var.value());
  for (const auto& [name, var] : buffers_) out.emplace(name, var.value());
  return out;
}

void ParameterStore::restore(const NamedArrays& arrays) {
  auto assign = [&arrays](const std::string& name, ag::Var var) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("missing array in checkpoint: " + name);
    if (it->second.shape() != var.shape()) {
      throw std::runtime_error("shape mismatch for " + name + ": expected " + var.shape().str() +
                               ", found " + it->second.shape().str());
    }
    var.value_mut() = it->second;
  };
  std::size_t expected = 0;
  for (const auto& [name, var] : params_) assign(name, var), ++expected;
  for (const auto& [name, var] : buffers_) assign(name, var), ++expected;
  if (arrays.size() != expected) {
    throw std::runtime_error("checkpoint holds " + std::to_string(arrays.size()) +
                             " arrays, model expects " + std::to_string(expected));
  }
}

Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_channels,
               int out_channels, int kernel, Rng& rng, bool with_bias) {
  weight_ = store.add_parameter(
      name + ".weight", he_uniform(Shape{out_channels, in_channels, kernel, kernel},
                                   in_channels * kernel * kernel, rng));
  if (with_bias) {
    bias_ = store.add_parameter(name + ".bias", Tensor(Shape{1, out_channels, 1, 1}, 0.0));
  }
}

BatchNorm2d::BatchNorm2d(ParameterStore& store, const std::string& name, int channels) {
  const Shape s{1, channels, 1, 1};
  gamma_ = store.add_parameter(name + ".gamma", Tensor(s, 1.0));
  beta_ = store.add_parameter(name + ".beta", Tensor(s, 0.0));
  buffers_.running_mean = store.add_buffer(name + ".running_mean", Tensor(s, 0.0));
  buffers_.running_var = store.add_buffer(name + ".running_var", Tensor(s, 1.0));
}

ag::Var BatchNorm2d::operator()(const ag::Var& x, ag::NormMode mode) const {
  ag::BatchNormBuffers buffers = buffers_;  // handles share storage
  return ag::batch_norm(x, gamma_, beta_, buffers, mode);
}

ConvBnRelu::ConvBnRelu(ParameterStore& store, const std::string& name, int in_channels,
                       int out_channels, Rng& rng)
    : conv_(store, name + ".conv", in_channels, out_channels, 3, rng, /*with_bias=*/false),
      bn_(store, name + ".bn", out_channels) {}

ag::Var ConvBnRelu::operator()(const ag::Var& x, ag::NormMode mode) const {
  return ag::relu(pre_activation(x, mode));
}

ag::Var ConvBnRelu::pre_activation(const ag::Var& x, ag::NormMode mode) const {
  return bn_(conv_(x), mode);
}

Adam::Adam(ParameterStore& store, AdamOptions options) : options_(options) {
  for (const auto& [name, var] : store.parameters()) {
    const std::size_t n = var.value().size();
    slots_.push_back(Moments{var, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& slot : slots_) {
    const Tensor& g = slot.param.grad();
    if (g.empty()) continue;
    Tensor& p = slot.param.value_mut();
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = b1 * slot.m[i] + (1 - b1) * g[i];
      slot.v[i] = b2 * slot.v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      p[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace nightiq
