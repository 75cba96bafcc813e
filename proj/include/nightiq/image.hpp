#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "nightiq/tensor.hpp"

namespace nightiq {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageSize {
  int height = 0;
  int width = 0;
};

/// H x W x {1,3} image with every value finite and in [0,1].
/// Stored planar as a (1, C, H, W) tensor.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, double fill = 0.0);

  /// Validates range, finiteness and channel count; throws ImageError otherwise.
  static ImageTensor from_tensor(Tensor t);
  /// Clamps into [0,1] (NaN maps to 0) before wrapping.
  static ImageTensor clamped(Tensor t);

  [[nodiscard]] int height() const { return tensor_.shape().h; }
  [[nodiscard]] int width() const { return tensor_.shape().w; }
  [[nodiscard]] int channels() const { return tensor_.shape().c; }
  [[nodiscard]] bool empty() const { return tensor_.empty(); }

  [[nodiscard]] double at(int c, int y, int x) const { return tensor_.at(0, c, y, x); }
  /// Callers writing through this are responsible for staying in [0,1].
  void set(int c, int y, int x, double v) { tensor_.at(0, c, y, x) = v; }

  [[nodiscard]] const Tensor& tensor() const { return tensor_; }

 private:
  explicit ImageTensor(Tensor t) : tensor_(std::move(t)) {}
  Tensor tensor_;
};

/// Decodes an 8-bit PNG/JPEG, converts to RGB, bilinear-resizes to target
/// (skipped when the size already matches) and scales to [0,1].
ImageTensor load_image(const std::filesystem::path& path, ImageSize target);
/// Decodes at native resolution.
ImageTensor load_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG (values rounded from [0,1]). 1-channel images are grayscale.
void save_image(const std::filesystem::path& path, const ImageTensor& image);

}  // namespace nightiq
