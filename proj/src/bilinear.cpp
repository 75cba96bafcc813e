#include "nightiq/bilinear.hpp"

#include <stdexcept>

namespace nightiq {

namespace {

std::array<Conv2d, 4> make_compressors(ParameterStore& store, const std::string& prefix, Rng& rng) {
  return {Conv2d(store, prefix + "0", kPyramidWidths[0], kCompactChannels, 1, rng),
          Conv2d(store, prefix + "1", kPyramidWidths[1], kCompactChannels, 1, rng),
          Conv2d(store, prefix + "2", kPyramidWidths[2], kCompactChannels, 1, rng),
          Conv2d(store, prefix + "3", kPyramidWidths[3], kCompactChannels, 1, rng)};
}

}  // namespace

BilinearHead::BilinearHead(ParameterStore& store, const std::string& prefix, Rng& rng)
    : compress_r_(make_compressors(store, prefix + ".compress_r", rng)),
      compress_l_(make_compressors(store, prefix + ".compress_l", rng)),
      fc1_(store, prefix + ".fc1", kDescriptorLength, kHiddenWidth, 1, rng),
      fc2_(store, prefix + ".fc2", kHiddenWidth, 1, 1, rng) {}

ag::Var BilinearHead::compress_reflectance(int scale, const ag::Var& c) const {
  return compress_r_.at(scale)(c);
}

ag::Var BilinearHead::compress_illumination(int scale, const ag::Var& c) const {
  return compress_l_.at(scale)(c);
}

HeadOutput BilinearHead::fuse_and_predict(const FeaturePyramid& reflectance,
                                          const FeaturePyramid& illumination) const {
  HeadOutput out;
  for (int i = 0; i < 4; ++i) {
    const Shape sr = reflectance.levels[i].shape();
    const Shape sl = illumination.levels[i].shape();
    if (sr != sl) {
      throw std::invalid_argument("pyramid level " + std::to_string(i + 1) + " shape mismatch: " +
                                  sr.str() + " vs " + sl.str());
    }
    const ag::Var pooled = nightiq::bilinear_pool(compress_reflectance(i, reflectance.levels[i]),
                                         compress_illumination(i, illumination.levels[i]));
    out.descriptor.per_scale[i] = normalize_descriptor(pooled);
  }
  out.descriptor.concatenated = ag::concat_channels(out.descriptor.per_scale);
  out.score = fc2_(ag::relu(fc1_(out.descriptor.concatenated)));
  return out;
}

ag::Var bilinear_pool(const ag::Var& compact_r, const ag::Var& compact_l) {
  if (compact_r.shape() != compact_l.shape()) {
    throw std::invalid_argument("bilinear_pool shape mismatch " + compact_r.shape().str() + " vs " +
                                compact_l.shape().str());
  }
  return ag::bilinear_pool(compact_r, compact_l);
}

ag::Var normalize_descriptor(const ag::Var& pooled) { return ag::signed_sqrt_normalize(pooled); }

std::vector<double> bilinear_pool(const Tensor& compact_r, const Tensor& compact_l) {
  const auto v = nightiq::bilinear_pool(ag::Var::constant(compact_r), ag::Var::constant(compact_l)).value();
  return {v.values().begin(), v.values().end()};
}

std::vector<double> normalize_descriptor(std::span<const double> pooled) {
  Tensor t(Shape{1, static_cast<int>(pooled.size()), 1, 1},
           std::vector<double>(pooled.begin(), pooled.end()));
  const auto v = normalize_descriptor(ag::Var::constant(t)).value();
  return {v.values().begin(), v.values().end()};
}

ag::Var quality_loss(const ag::Var& predictions, const ag::Var& targets) {
  if (predictions.value().size() != targets.value().size() || predictions.value().empty()) {
    throw std::invalid_argument("quality_loss: prediction/target count mismatch");
  }
  const ag::Var t = ag::reshape(targets, predictions.shape());
  return ag::mean(ag::square(predictions - t));
}

double quality_loss(std::span<const double> predictions, std::span<const double> targets) {
  const int n = static_cast<int>(predictions.size());
  if (n == 0) throw std::invalid_argument("quality_loss: empty batch");
  Tensor p(Shape{n, 1, 1, 1}, std::vector<double>(predictions.begin(), predictions.end()));
  if (targets.size() != predictions.size()) {
    throw std::invalid_argument("quality_loss: prediction/target count mismatch");
  }
  Tensor t(Shape{n, 1, 1, 1}, std::vector<double>(targets.begin(), targets.end()));
  return quality_loss(ag::Var::constant(p), ag::Var::constant(t)).item();
}

}  // namespace nightiq
