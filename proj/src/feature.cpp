#include "nightiq/feature.hpp"

#include <cmath>
#include <numeric>
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

FeatureEncoder::FeatureEncoder(ParameterStore& store, const std::string& prefix, int in_channels,
                               Rng& rng)
    : in_channels_(in_channels),
      stages_{ConvBnRelu(store, prefix + ".stage1", in_channels, kPyramidWidths[0], rng),
              ConvBnRelu(store, prefix + ".stage2", kPyramidWidths[0], kPyramidWidths[1], rng),
              ConvBnRelu(store, prefix + ".stage3", kPyramidWidths[1], kPyramidWidths[2], rng),
              ConvBnRelu(store, prefix + ".stage4", kPyramidWidths[2], kPyramidWidths[3], rng)} {}

FeaturePyramid FeatureEncoder::encode(const ag::Var& x, ag::NormMode mode) const {
  const Shape s = x.shape();
  if (s.c != in_channels_) {
    throw std::invalid_argument("encoder expects " + std::to_string(in_channels_) +
                                " channels, got " + s.str());
  }
  if (s.h % 8 != 0 || s.w % 8 != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("encoder input extents must be divisible by 8, got " + s.str());
  }
  FeaturePyramid p;
  ag::Var cur = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (i > 0) cur = ag::avg_pool2(cur);
    cur = stages_[i](cur, mode);
    p.levels[i] = cur;
  }
  return p;
}

FeatureDecoder::FeatureDecoder(ParameterStore& store, const std::string& prefix, int out_channels,
                               Rng& rng)
    : stages_{ConvBnRelu(store, prefix + ".stage1", kPyramidWidths[3], kPyramidWidths[2], rng),
              ConvBnRelu(store, prefix + ".stage2", kPyramidWidths[2], kPyramidWidths[1], rng),
              ConvBnRelu(store, prefix + ".stage3", kPyramidWidths[1], kPyramidWidths[0], rng)},
      out_(store, prefix + ".out", kPyramidWidths[0], out_channels, 3, rng) {}

ag::Var FeatureDecoder::decode(const ag::Var& c4, ag::NormMode mode) const {
  if (c4.shape().c != kPyramidWidths[3]) {
    throw std::invalid_argument("decoder expects 128-channel input, got " + c4.shape().str());
  }
  ag::Var cur = c4;
  for (const auto& stage : stages_) {
    cur = ag::resize_bilinear(cur, cur.shape().h * 2, cur.shape().w * 2);
    cur = stage(cur, mode);
  }
  return ag::sigmoid(out_(cur));
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(size);
  const int r = size / 2;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    taps[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= total;
  return taps;
}

ag::Var ssim(const ag::Var& a, const ag::Var& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  if (a.shape().h < params.window || a.shape().w < params.window) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(params.window) +
                                "x" + std::to_string(params.window) + " window");
  }
  const auto taps = gaussian_taps(params.window, params.sigma);
  auto filt = [&taps](const ag::Var& x) {
    return ag::separable_filter(x, taps, 1.0, ag::Padding::kValid);
  };
  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  const ag::Var mu_a = filt(a);
  const ag::Var mu_b = filt(b);
  const ag::Var mu_aa = ag::square(mu_a);
  const ag::Var mu_bb = ag::square(mu_b);
  const ag::Var mu_ab = mu_a * mu_b;
  const ag::Var var_a = filt(ag::square(a)) - mu_aa;
  const ag::Var var_b = filt(ag::square(b)) - mu_bb;
  const ag::Var cov = filt(a * b) - mu_ab;
  const ag::Var num = ag::add_scalar(ag::mul_scalar(mu_ab, 2.0), c1) *
                      ag::add_scalar(ag::mul_scalar(cov, 2.0), c2);
  const ag::Var den = ag::add_scalar(mu_aa + mu_bb, c1) * ag::add_scalar(var_a + var_b, c2);
  return ag::mean(num / den);
}

double ssim(const Tensor& a, const Tensor& b, const SsimParams& params) {
  return ssim(c(a), c(b), params).item();
}

std::vector<double> color_kernel_taps(const ColorLossParams& params) {
  const int r = params.kernel_radius;
  std::vector<double> taps(2 * r + 1);
  for (int i = -r; i <= r; ++i) {
    const double d = i - params.mu;
    taps[i + r] = std::exp(-(d * d) / (2.0 * params.sigma));
  }
  return taps;
}

std::vector<double> color_kernel(const ColorLossParams& params) {
  const auto g = color_kernel_taps(params);
  std::vector<double> k;
  k.reserve(g.size() * g.size());
  for (double gi : g)
    for (double gj : g) k.push_back(params.t * gi * gj);
  return k;
}

ag::Var gaussian_blur(const ag::Var& x, const ColorLossParams& params) {
  const auto taps = color_kernel_taps(params);
  return ag::separable_filter(x, taps, params.t, ag::Padding::kReplicate);
}

Tensor gaussian_blur(const Tensor& x, const ColorLossParams& params) {
  return gaussian_blur(c(x), params).value();
}

ag::Var loss_structure(const ag::Var& r, const ag::Var& r_hat) {
  return ag::add_scalar(ag::mul_scalar(ssim(r, r_hat), -1.0), 1.0);
}

ag::Var loss_color(const ag::Var& r, const ag::Var& r_hat, const ColorLossParams& params) {
  require_same_shape(r, r_hat, "color loss");
  return ag::mean(ag::square(gaussian_blur(r, params) - gaussian_blur(r_hat, params)));
}

ag::Var loss_mse(const ag::Var& l, const ag::Var& l_hat) {
  require_same_shape(l, l_hat, "mse loss");
  return ag::mean(ag::square(l - l_hat));
}

ag::Var feature_loss(const ag::Var& r, const ag::Var& r_hat, const ag::Var& l, const ag::Var& l_hat,
                     const ColorLossParams& params) {
  return loss_structure(r, r_hat) + loss_color(r, r_hat, params) + loss_mse(l, l_hat);
}

double loss_structure(const Tensor& r, const Tensor& r_hat) {
  return loss_structure(c(r), c(r_hat)).item();
}

double loss_color(const Tensor& r, const Tensor& r_hat, const ColorLossParams& params) {
  return loss_color(c(r), c(r_hat), params).item();
}

double loss_mse(const Tensor& l, const Tensor& l_hat) { return loss_mse(c(l), c(l_hat)).item(); }

double feature_loss(const Tensor& r, const Tensor& r_hat, const Tensor& l, const Tensor& l_hat,
                    const ColorLossParams& params) {
  return feature_loss(c(r), c(r_hat), c(l), c(l_hat), params).item();
}

}  // namespace nightiq
