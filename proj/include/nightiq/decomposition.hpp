#pragma once

// Retinex-style decomposition network (I = R (x) L, L single-channel and
// broadcast over RGB) and its unsupervised pairwise losses. All l1 norms are
// realized as means over elements.

#include <string>

#include "nightiq/autograd.hpp"
#include "nightiq/image.hpp"
#include "nightiq/nn.hpp"

namespace nightiq {

struct DecompositionVars {
  ag::Var reflectance;   // (N,3,H,W)
  ag::Var illumination;  // (N,1,H,W)
};

struct DecompositionOutput {
  ImageTensor reflectance;
  ImageTensor illumination;
};

/// Reflectance stream: conv(3->32) -> down(32->64) -> down(64->128) ->
/// up(128->64, +skip) -> up(64->32, +skip) -> conv(32->32) -> conv(32->3) -> sigmoid.
/// Illumination stream: conv(3->32) -> conv(32->32), concatenated with the last
/// 32-channel reflectance feature map, conv(64->1) -> sigmoid.
class DecompositionNet {
 public:
  static constexpr int kMinExtent = 16;

  DecompositionNet(ParameterStore& store, const std::string& prefix, Rng& rng);

  /// x is (N,3,H,W) with H, W >= 16.
  [[nodiscard]] DecompositionVars forward(const ag::Var& x, ag::NormMode mode) const;

 private:
  ConvBnRelu r_in_, r_down1_, r_down2_;
  ConvBnRelu r_up1_, r_up2_;  // used through pre_activation; skip added before ReLU
  ConvBnRelu r_refine_;
  Conv2d r_out_;
  ConvBnRelu l_conv1_, l_conv2_;
  Conv2d l_out_;
};

/// Inference on a single image (running statistics, no graph).
DecompositionOutput decompose(const ImageTensor& image, const DecompositionNet& net);

/// |dx X| + |dy X| with forward differences; the last column/row difference is 0.
ag::Var spatial_gradient(const ag::Var& x);
Tensor spatial_gradient(const Tensor& x);

struct PenaltyParams {
  double c = 0.1;
};

/// Scalar penalty curve (m / c^2) * exp(-m^2 / (2 c^2)); peaks at m = c.
double penalty_curve(double m, double c);

/// Mean of the penalty curve over a non-negative map.
ag::Var penalty_f(const ag::Var& m, const PenaltyParams& params);
double penalty_f(const Tensor& m, const PenaltyParams& params);

inline constexpr double kSmoothnessTau = 0.01;

ag::Var loss_reflection_consistency(const ag::Var& r_night, const ag::Var& r_exposed);
ag::Var loss_illum_consistency(const ag::Var& l_night, const ag::Var& l_exposed,
                               const PenaltyParams& params);
ag::Var loss_illum_smoothness(const ag::Var& l_night, const ag::Var& r_night,
                              const ag::Var& l_exposed, const ag::Var& r_exposed,
                              double tau = kSmoothnessTau);
ag::Var loss_reflect_tv(const ag::Var& r_night, const ag::Var& r_exposed);
ag::Var loss_reconstruction(const ag::Var& i_night, const DecompositionVars& night,
                            const ag::Var& i_exposed, const DecompositionVars& exposed);

double loss_reflection_consistency(const Tensor& r_night, const Tensor& r_exposed);
double loss_illum_consistency(const Tensor& l_night, const Tensor& l_exposed,
                              const PenaltyParams& params);
double loss_illum_smoothness(const Tensor& l_night, const Tensor& r_night, const Tensor& l_exposed,
                             const Tensor& r_exposed, double tau = kSmoothnessTau);
double loss_reflect_tv(const Tensor& r_night, const Tensor& r_exposed);
double loss_reconstruction(const Tensor& i_night, const Tensor& r_night, const Tensor& l_night,
                           const Tensor& i_exposed, const Tensor& r_exposed,
                           const Tensor& l_exposed);

template <typename T>
struct DecompositionLossTerms {
  T con_r, con_l, sm_r, sm_l, rec, total;
};

using DecompositionLossBreakdown = DecompositionLossTerms<double>;

/// All five terms and their unweighted sum.
DecompositionLossTerms<ag::Var> decomposition_loss(const ag::Var& i_night, const ag::Var& i_exposed,
                                                   const DecompositionVars& night,
                                                   const DecompositionVars& exposed,
                                                   const PenaltyParams& params);
DecompositionLossBreakdown decomposition_loss(const ImageTensor& i_night, const ImageTensor& i_exposed,
                                              const DecompositionOutput& night,
                                              const DecompositionOutput& exposed,
                                              const PenaltyParams& params);

}  // namespace nightiq
