#include "nightiq/eai.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nightiq {

void CameraResponseParams::validate() const {
  if (!(base_ratio > 1.0)) throw std::invalid_argument("base exposure ratio must be > 1");
  if (ladder_size < 1) throw std::invalid_argument("exposure ladder size must be >= 1");
}

double camera_response(double pixel, double ratio, const CameraResponseParams& params) {
  if (!(ratio > 0.0)) throw std::invalid_argument("exposure ratio must be positive");
  const double gamma = std::pow(ratio, params.alpha);
  return std::pow(pixel, gamma) * std::pow(ratio, params.beta * (1.0 - gamma));
}

ImageTensor camera_response(const ImageTensor& image, double ratio,
                            const CameraResponseParams& params) {
  if (!(ratio > 0.0)) throw std::invalid_argument("exposure ratio must be positive");
  const double gamma = std::pow(ratio, params.alpha);
  const double gain = std::pow(ratio, params.beta * (1.0 - gamma));
  Tensor out = image.tensor();
  for (auto& v : out.values()) v = std::min(1.0, std::pow(v, gamma) * gain);
  return ImageTensor::clamped(std::move(out));
}

std::vector<double> exposure_ratios(const CameraResponseParams& params) {
  params.validate();
  std::vector<double> ratios;
  double r = 1.0;
  for (int k = 0; k < params.ladder_size; ++k) {
    r *= params.base_ratio;
    ratios.push_back(r);
  }
  return ratios;
}

std::vector<ImageTensor> exposure_ladder(const ImageTensor& night,
                                         const CameraResponseParams& params) {
  std::vector<ImageTensor> ladder;
  for (double r : exposure_ratios(params)) ladder.push_back(camera_response(night, r, params));
  return ladder;
}

ImageTensor WellExposednessFusion::fuse(std::span<const ImageTensor> ladder) const {
  if (ladder.empty()) throw std::invalid_argument("cannot fuse an empty exposure ladder");
  const Shape shape = ladder.front().tensor().shape();
  for (const auto& img : ladder) {
    if (img.tensor().shape() != shape) {
      throw std::invalid_argument("exposure ladder shape mismatch: " + shape.str() + " vs " +
                                  img.tensor().shape().str());
    }
  }
  const double denom = 2.0 * sigma_ * sigma_;
  Tensor num(shape, 0.0);
  Tensor wsum(shape, 0.0);
  for (const auto& img : ladder) {
    const auto v = img.tensor().values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = v[i] - center_;
      const double w = std::exp(-d * d / denom);
      num[i] += w * v[i];
      wsum[i] += w;
    }
  }
  for (std::size_t i = 0; i < num.size(); ++i) num[i] /= wsum[i];
  return ImageTensor::clamped(std::move(num));
}

ImageTensor fuse_exposures(std::span<const ImageTensor> ladder) {
  return WellExposednessFusion{}.fuse(ladder);
}

ImageTensor make_eai(const ImageTensor& night, const CameraResponseParams& params) {
  return make_eai(night, params, WellExposednessFusion{});
}

ImageTensor make_eai(const ImageTensor& night, const CameraResponseParams& params,
                     const ExposureFusion& fusion) {
  const auto ladder = exposure_ladder(night, params);
  return fusion.fuse(ladder);
}

std::filesystem::path eai_cache_path(const std::filesystem::path& image_path,
                                     const std::filesystem::path& eai_dir) {
  const auto dir = eai_dir.empty() ? image_path.parent_path() : eai_dir;
  return dir / (image_path.stem().string() + ".eai.png");
}

}  // namespace nightiq
