#pragma once

#include <array>
#include <string>
#include <vector>

#include "nightiq/autograd.hpp"
#include "nightiq/nn.hpp"

namespace nightiq {

inline constexpr std::array<int, 4> kPyramidWidths{16, 32, 64, 128};

/// Side outputs C1..C4 at strides 1, 2, 4, 8.
struct FeaturePyramid {
  std::array<ag::Var, 4> levels;
};

/// Four conv3x3+BN+ReLU stages (16/32/64/128 channels) with 2x2 mean pooling
/// between consecutive stages. Each side output is taken after its ReLU,
/// before the next pooling.
class FeatureEncoder {
 public:
  FeatureEncoder(ParameterStore& store, const std::string& prefix, int in_channels, Rng& rng);

  /// x is (N, in_channels, H, W) with H and W divisible by 8.
  [[nodiscard]] FeaturePyramid encode(const ag::Var& x, ag::NormMode mode) const;
  [[nodiscard]] int in_channels() const { return in_channels_; }

 private:
  int in_channels_;
  std::array<ConvBnRelu, 4> stages_;
};

/// Mirrors the encoder: three (2x bilinear upsample -> conv3x3+BN+ReLU) stages
/// 128->64->32->16, then conv3x3 to the output channel count and a sigmoid.
class FeatureDecoder {
 public:
  FeatureDecoder(ParameterStore& store, const std::string& prefix, int out_channels, Rng& rng);

  [[nodiscard]] ag::Var decode(const ag::Var& c4, ag::NormMode mode) const;

 private:
  std::array<ConvBnRelu, 3> stages_;
  Conv2d out_;
};

// ---- SSIM ----

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_taps(int size, double sigma);

/// Mean SSIM over all valid window positions, channels and samples
/// (equivalently the channel-mean of per-channel SSIM).
ag::Var ssim(const ag::Var& a, const ag::Var& b, const SsimParams& params = {});
double ssim(const Tensor& a, const Tensor& b, const SsimParams& params = {});

// ---- color blur ----

struct ColorLossParams {
  double t = 0.053;
  double mu = 0.0;
  double sigma = 3.0;
  int kernel_radius = 10;
};

/// Un-normalized 1-D factor g(d) = exp(-(d - mu)^2 / (2 sigma)); the 2-D kernel
/// is T * g(di) * g(dj).
std::vector<double> color_kernel_taps(const ColorLossParams& params);
/// Dense (2r+1)^2 kernel, row-major.
std::vector<double> color_kernel(const ColorLossParams& params);

/// Depthwise blur with the color kernel and replicate padding.
ag::Var gaussian_blur(const ag::Var& x, const ColorLossParams& params);
Tensor gaussian_blur(const Tensor& x, const ColorLossParams& params);

// ---- losses ----

ag::Var loss_structure(const ag::Var& r, const ag::Var& r_hat);
ag::Var loss_color(const ag::Var& r, const ag::Var& r_hat, const ColorLossParams& params);
ag::Var loss_mse(const ag::Var& l, const ag::Var& l_hat);
/// Unweighted sum of the three terms.
ag::Var feature_loss(const ag::Var& r, const ag::Var& r_hat, const ag::Var& l, const ag::Var& l_hat,
                     const ColorLossParams& params);

double loss_structure(const Tensor& r, const Tensor& r_hat);
double loss_color(const Tensor& r, const Tensor& r_hat, const ColorLossParams& params);
double loss_mse(const Tensor& l, const Tensor& l_hat);
double feature_loss(const Tensor& r, const Tensor& r_hat, const Tensor& l, const Tensor& l_hat,
                    const ColorLossParams& params);

}  // namespace nightiq
