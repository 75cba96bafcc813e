#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "nightiq/autograd.hpp"

namespace nightiq {

using Rng = std::mt19937_64;

/// Name -> array map; the unit of checkpoint persistence.
using NamedArrays = std::map<std::string, Tensor>;

/// Owns every trainable parameter and persistent buffer of a network.
/// Names are unique dotted paths ("decomposition.enc0.conv.weight").
class ParameterStore {
 public:
  ag::Var add_parameter(const std::string& name, Tensor init);
  ag::Var add_buffer(const std::string& name, Tensor init);

  [[nodiscard]] const std::map<std::string, ag::Var>& parameters() const { return params_; }
  [[nodiscard]] const std::map<std::string, ag::Var>& buffers() const { return buffers_; }
  [[nodiscard]] std::vector<ag::Var> parameters_with_prefix(const std::string& prefix) const;

  void zero_grad();
  [[nodiscard]] std::size_t parameter_count() const;

  /// Parameters and buffers by name.
  [[nodiscard]] NamedArrays snapshot() const;
  /// Overwrites every registered entry; names and shapes must match exactly.
  void restore(const NamedArrays& arrays);

 private:
  std::map<std::string, ag::Var> params_;
  std::map<std::string, ag::Var> buffers_;
};

/// Uniform He-style fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, int fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
         int kernel, Rng& rng, bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight_, bias_); }

  [[nodiscard]] const ag::Var& weight() const { return weight_; }
  [[nodiscard]] const ag::Var& bias() const { return bias_; }
  [[nodiscard]] int out_channels() const { return weight_.shape().n; }

 private:
  ag::Var weight_;
  ag::Var bias_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore& store, const std::string& name, int channels);

  ag::Var operator()(const ag::Var& x, ag::NormMode mode) const;

 private:
  ag::Var gamma_;
  ag::Var beta_;
  ag::BatchNormBuffers buffers_;
};

/// conv3x3 -> batch norm -> ReLU.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParameterStore& store, const std::string& name, int in_channels, int out_channels,
             Rng& rng);

  ag::Var operator()(const ag::Var& x, ag::NormMode mode) const;
  /// conv -> batch norm, no activation.
  ag::Var pre_activation(const ag::Var& x, ag::NormMode mode) const;

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

struct AdamOptions {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over every parameter of a store, visited in name order.
class Adam {
 public:
  Adam(ParameterStore& store, AdamOptions options);

  void step();
  [[nodiscard]] std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    ag::Var param;
    std::vector<double> m, v;
  };
  AdamOptions options_;
  std::vector<Moments> slots_;
  std::int64_t t_ = 0;
};

}  // namespace nightiq
