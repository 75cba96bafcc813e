#pragma once

// Exposure-adjusted image synthesis: a camera response model brightens a
// night-time image at a geometric ladder of exposure ratios, and an exposure
// fusion collapses the ladder into one brighter, consistent view.

#include <filesystem>
#include <span>
#include <vector>

#include "nightiq/image.hpp"

namespace nightiq {

struct CameraResponseParams {
  double alpha = -0.3293;
  double beta = 1.1258;
  double base_ratio = 2.4;  // e > 1
  int ladder_size = 4;      // K >= 1

  /// Throws std::invalid_argument when e <= 1 or K < 1.
  void validate() const;
};

/// E(I, e) = I^(e^alpha) * e^(beta * (1 - e^alpha)) for one pixel value, unclamped.
double camera_response(double pixel, double ratio, const CameraResponseParams& params);

/// Per-channel camera response, clamped to [0,1]. ratio must be > 0.
ImageTensor camera_response(const ImageTensor& image, double ratio,
                            const CameraResponseParams& params);

/// e, e^2, ..., e^K.
std::vector<double> exposure_ratios(const CameraResponseParams& params);

std::vector<ImageTensor> exposure_ladder(const ImageTensor& night,
                                         const CameraResponseParams& params);

/// Pluggable multi-exposure fusion.
class ExposureFusion {
 public:
  virtual ~ExposureFusion() = default;
  /// Non-empty ladder of identically shaped images -> fused image in [0,1].
  [[nodiscard]] virtual ImageTensor fuse(std::span<const ImageTensor> ladder) const = 0;
};

/// Per-pixel, per-channel weighted mean with Gaussian well-exposedness
/// weights w = exp(-(v - center)^2 / (2 sigma^2)), normalized across the ladder.
class WellExposednessFusion final : public ExposureFusion {
 public:
  explicit WellExposednessFusion(double center = 0.5, double sigma = 0.2)
      : center_(center), sigma_(sigma) {}
  [[nodiscard]] ImageTensor fuse(std::span<const ImageTensor> ladder) const override;

 private:
  double center_;
  double sigma_;
};

ImageTensor fuse_exposures(std::span<const ImageTensor> ladder);

ImageTensor make_eai(const ImageTensor& night, const CameraResponseParams& params);
ImageTensor make_eai(const ImageTensor& night, const CameraResponseParams& params,
                     const ExposureFusion& fusion);

/// "<eai_dir or image dir>/<stem>.eai.png".
std::filesystem::path eai_cache_path(const std::filesystem::path& image_path,
                                     const std::filesystem::path& eai_dir = {});

}  // namespace nightiq
