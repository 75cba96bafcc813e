#include "nightiq/decomposition.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace nightiq {

namespace {

void require_same_shape(const ag::Var& a, const ag::Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}

ag::Var c(const Tensor& t) { return ag::Var::constant(t); }

}  // namespace

DecompositionNet::DecompositionNet(ParameterStore& store, const std::string& prefix, Rng& rng)
    : r_in_(store, prefix + ".r_in", 3, 32, rng),
      r_down1_(store, prefix + ".r_down1", 32, 64, rng),
      r_down2_(store, prefix + ".r_down2", 64, 128, rng),
      r_up1_(store, prefix + ".r_up1", 128, 64, rng),
      r_up2_(store, prefix + ".r_up2", 64, 32, rng),
      r_refine_(store, prefix + ".r_refine", 32, 32, rng),
      r_out_(store, prefix + ".r_out", 32, 3, 3, rng),
      l_conv1_(store, prefix + ".l_conv1", 3, 32, rng),
      l_conv2_(store, prefix + ".l_conv2", 32, 32, rng),
      l_out_(store, prefix + ".l_out", 64, 1, 3, rng) {}

DecompositionVars DecompositionNet::forward(const ag::Var& x, ag::NormMode mode) const {
  const Shape s = x.shape();
  if (s.c != 3) throw std::invalid_argument("decomposition expects 3-channel input, got " + s.str());
  if (s.h < kMinExtent || s.w < kMinExtent) {
    throw std::invalid_argument("decomposition input must be at least 16x16, got " + s.str());
  }
  const ag::Var a0 = r_in_(x, mode);
  const ag::Var a1 = r_down1_(ag::avg_pool2(a0), mode);
  const ag::Var a2 = r_down2_(ag::avg_pool2(a1), mode);
  const ag::Var u1 = ag::relu(
      r_up1_.pre_activation(ag::resize_bilinear(a2, a1.shape().h, a1.shape().w), mode) + a1);
  const ag::Var u2 = ag::relu(
      r_up2_.pre_activation(ag::resize_bilinear(u1, a0.shape().h, a0.shape().w), mode) + a0);
  const ag::Var features = r_refine_(u2, mode);
  const ag::Var reflectance = ag::sigmoid(r_out_(features));

  const ag::Var l2 = l_conv2_(l_conv1_(x, mode), mode);
  const std::array<ag::Var, 2> cat{l2, features};
  const ag::Var illumination = ag::sigmoid(l_out_(ag::concat_channels(cat)));
  return {reflectance, illumination};
}

DecompositionOutput decompose(const ImageTensor& image, const DecompositionNet& net) {
  ag::NoGradGuard no_grad;
  const auto out = net.forward(c(image.tensor()), ag::NormMode::kEval);
  return {ImageTensor::clamped(out.reflectance.value()),
          ImageTensor::clamped(out.illumination.value())};
}

ag::Var spatial_gradient(const ag::Var& x) {
  const Shape s = x.shape();
  if (s.h < 2 || s.w < 2) {
    throw std::invalid_argument("spatial_gradient needs at least 2x2 input, got " + s.str());
  }
  return ag::abs(ag::diff_x(x)) + ag::abs(ag::diff_y(x));
}

Tensor spatial_gradient(const Tensor& x) { return spatial_gradient(c(x)).value(); }

double penalty_curve(double m, double c) {
  if (m <= 0.0) return 0.0;
  // A single exp keeps the tail monotone down into the subnormal range.
  return std::exp(std::log(m) - 2.0 * std::log(c) - (m * m) / (2.0 * c * c));
}

ag::Var penalty_f(const ag::Var& m, const PenaltyParams& params) {
  if (!(params.c > 0)) throw std::invalid_argument("penalty parameter c must be positive");
  for (double v : m.value().values()) {
    if (v < 0) throw std::invalid_argument("penalty_f expects a non-negative map");
  }
  const double c2 = params.c * params.c;
  const ag::Var decay = ag::exp(ag::mul_scalar(ag::square(m), -1.0 / (2.0 * c2)));
  return ag::mean(ag::mul_scalar(m, 1.0 / c2) * decay);
}

double penalty_f(const Tensor& m, const PenaltyParams& params) {
  return penalty_f(c(m), params).item();
}

ag::Var loss_reflection_consistency(const ag::Var& r_night, const ag::Var& r_exposed) {
  require_same_shape(r_night, r_exposed, "reflection consistency");
  return ag::mean(ag::abs(r_night - r_exposed));
}

ag::Var loss_illum_consistency(const ag::Var& l_night, const ag::Var& l_exposed,
                               const PenaltyParams& params) {
  require_same_shape(l_night, l_exposed, "illumination consistency");
  return penalty_f(spatial_gradient(l_night) + spatial_gradient(l_exposed), params);
}

namespace {

ag::Var structure_aware_term(const ag::Var& l, const ag::Var& r, double tau) {
  if (l.shape().h != r.shape().h || l.shape().w != r.shape().w || l.shape().n != r.shape().n) {
    throw std::invalid_argument("illumination smoothness: extent mismatch " + l.shape().str() +
                                " vs " + r.shape().str());
  }
  const ag::Var grad_r = ag::channel_mean(spatial_gradient(r));
  const ag::Var denom = ag::clamp_min(ag::square(grad_r), tau);
  return ag::mean(spatial_gradient(l) / denom);
}

}  // namespace

ag::Var loss_illum_smoothness(const ag::Var& l_night, const ag::Var& r_night,
                              const ag::Var& l_exposed, const ag::Var& r_exposed, double tau) {
  return structure_aware_term(l_night, r_night, tau) + structure_aware_term(l_exposed, r_exposed, tau);
}

ag::Var loss_reflect_tv(const ag::Var& r_night, const ag::Var& r_exposed) {
  return ag::mean(spatial_gradient(r_night)) + ag::mean(spatial_gradient(r_exposed));
}

namespace {

ag::Var reconstruction_term(const ag::Var& image, const DecompositionVars& d) {
  require_same_shape(image, d.reflectance, "reconstruction");
  const Shape ls = d.illumination.shape();
  const Shape is = image.shape();
  if (ls.c != 1 || ls.n != is.n || ls.h != is.h || ls.w != is.w) {
    throw std::invalid_argument("reconstruction: illumination must be (N,1,H,W), got " + ls.str());
  }
  return ag::mean(ag::abs(image - d.reflectance * d.illumination));
}

}  // namespace

ag::Var loss_reconstruction(const ag::Var& i_night, const DecompositionVars& night,
                            const ag::Var& i_exposed, const DecompositionVars& exposed) {
  return reconstruction_term(i_night, night) + reconstruction_term(i_exposed, exposed);
}

double loss_reflection_consistency(const Tensor& r_night, const Tensor& r_exposed) {
  return loss_reflection_consistency(c(r_night), c(r_exposed)).item();
}

double loss_illum_consistency(const Tensor& l_night, const Tensor& l_exposed,
                              const PenaltyParams& params) {
  return loss_illum_consistency(c(l_night), c(l_exposed), params).item();
}

double loss_illum_smoothness(const Tensor& l_night, const Tensor& r_night, const Tensor& l_exposed,
                             const Tensor& r_exposed, double tau) {
  return loss_illum_smoothness(c(l_night), c(r_night), c(l_exposed), c(r_exposed), tau).item();
}

double loss_reflect_tv(const Tensor& r_night, const Tensor& r_exposed) {
  return loss_reflect_tv(c(r_night), c(r_exposed)).item();
}

double loss_reconstruction(const Tensor& i_night, const Tensor& r_night, const Tensor& l_night,
                           const Tensor& i_exposed, const Tensor& r_exposed,
                           const Tensor& l_exposed) {
  return loss_reconstruction(c(i_night), {c(r_night), c(l_night)}, c(i_exposed),
                             {c(r_exposed), c(l_exposed)})
      .item();
}

DecompositionLossTerms<ag::Var> decomposition_loss(const ag::Var& i_night, const ag::Var& i_exposed,
                                                   const DecompositionVars& night,
                                                   const DecompositionVars& exposed,
                                                   const PenaltyParams& params) {
  DecompositionLossTerms<ag::Var> t;
  t.con_r = loss_reflection_consistency(night.reflectance, exposed.reflectance);
  t.con_l = loss_illum_consistency(night.illumination, exposed.illumination, params);
  t.sm_r = loss_reflect_tv(night.reflectance, exposed.reflectance);
  t.sm_l = loss_illum_smoothness(night.illumination, night.reflectance, exposed.illumination,
                                 exposed.reflectance);
  t.rec = loss_reconstruction(i_night, night, i_exposed, exposed);
  t.total = t.con_r + t.con_l + t.sm_r + t.sm_l + t.rec;
  return t;
}

DecompositionLossBreakdown decomposition_loss(const ImageTensor& i_night, const ImageTensor& i_exposed,
                                              const DecompositionOutput& night,
                                              const DecompositionOutput& exposed,
                                              const PenaltyParams& params) {
  const auto t = decomposition_loss(
      c(i_night.tensor()), c(i_exposed.tensor()),
      {c(night.reflectance.tensor()), c(night.illumination.tensor())},
      {c(exposed.reflectance.tensor()), c(exposed.illumination.tensor())}, params);
  return {t.con_r.item(), t.con_l.item(), t.sm_r.item(), t.sm_l.item(), t.rec.item(), t.total.item()};
}

}  // namespace nightiq
