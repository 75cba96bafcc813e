#pragma once

#include <array>
#include <span>
#include <string>

#include "nightiq/autograd.hpp"
#include "nightiq/feature.hpp"
#include "nightiq/nn.hpp"

namespace nightiq {

inline constexpr int kCompactChannels = 32;
inline constexpr int kScaleDescriptorLength = kCompactChannels * kCompactChannels;  // 1024
inline constexpr int kDescriptorLength = 4 * kScaleDescriptorLength;                // 4096
inline constexpr int kHiddenWidth = 512;

struct BilinearDescriptor {
  std::array<ag::Var, 4> per_scale;  // (N, 1024, 1, 1), normalized
  ag::Var concatenated;              // (N, 4096, 1, 1)
};

struct HeadOutput {
  BilinearDescriptor descriptor;
  ag::Var score;  // (N, 1, 1, 1)
};

/// Per-scale 1x1 compression of both pyramids to 32 channels, bilinear pooling,
/// signed-sqrt + l2 normalization, concatenation, then 4096 -> 512 (ReLU) -> 1.
class BilinearHead {
 public:
  BilinearHead(ParameterStore& store, const std::string& prefix, Rng& rng);

  /// Compresses level `scale` (0-based) of the reflectance or illumination pyramid.
  [[nodiscard]] ag::Var compress_reflectance(int scale, const ag::Var& c) const;
  [[nodiscard]] ag::Var compress_illumination(int scale, const ag::Var& c) const;

  [[nodiscard]] HeadOutput fuse_and_predict(const FeaturePyramid& reflectance,
                                            const FeaturePyramid& illumination) const;

 private:
  std::array<Conv2d, 4> compress_r_;
  std::array<Conv2d, 4> compress_l_;
  Conv2d fc1_;
  Conv2d fc2_;
};

/// Location-averaged (C_R)^T C_L, flattened row-major. Inputs must match in shape.
ag::Var bilinear_pool(const ag::Var& compact_r, const ag::Var& compact_l);
/// sign(b) * sqrt(|b|), divided by its l2 norm; zero stays zero.
ag::Var normalize_descriptor(const ag::Var& pooled);

std::vector<double> bilinear_pool(const Tensor& compact_r, const Tensor& compact_l);
std::vector<double> normalize_descriptor(std::span<const double> pooled);

/// Mean over the batch of squared error.
ag::Var quality_loss(const ag::Var& predictions, const ag::Var& targets);
double quality_loss(std::span<const double> predictions, std::span<const double> targets);

}  // namespace nightiq
