#include "nightiq/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace nightiq {

namespace {

ImageTensor from_bgr8(const cv::Mat& bgr) {
  ImageTensor img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      // OpenCV decodes as BGR.
      img.set(0, y, x, row[x][2] / 255.0);
      img.set(1, y, x, row[x][1] / 255.0);
      img.set(2, y, x, row[x][0] / 255.0);
    }
  }
  return img;
}

cv::Mat decode(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw ImageError("cannot decode image: " + path.string());
  if (raw.depth() != CV_8U) raw.convertTo(raw, CV_8U);
  return raw;
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels, double fill)
    : tensor_(Shape{1, channels, height, width}, fill) {
  if (channels != 1 && channels != 3) throw ImageError("image channels must be 1 or 3");
  if (!(fill >= 0.0 && fill <= 1.0)) throw ImageError("image fill value outside [0,1]");
}

ImageTensor ImageTensor::from_tensor(Tensor t) {
  const Shape s = t.shape();
  if (s.n != 1) throw ImageError("image tensor must hold one sample, got " + s.str());
  if (s.c != 1 && s.c != 3) throw ImageError("image channels must be 1 or 3, got " + s.str());
  for (double v : t.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ImageError("image value outside [0,1]: " + std::to_string(v));
    }
  }
  return ImageTensor(std::move(t));
}

ImageTensor ImageTensor::clamped(Tensor t) {
  for (auto& v : t.values()) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  return from_tensor(std::move(t));
}

ImageTensor load_image(const std::filesystem::path& path, ImageSize target) {
  if (target.height <= 0 || target.width <= 0) {
    throw ImageError("target size must be positive");
  }
  cv::Mat raw = decode(path);
  if (raw.rows != target.height || raw.cols != target.width) {
    cv::Mat resized;
    cv::resize(raw, resized, cv::Size(target.width, target.height), 0, 0, cv::INTER_LINEAR);
    raw = resized;
  }
  return from_bgr8(raw);
}

ImageTensor load_image(const std::filesystem::path& path) { return from_bgr8(decode(path)); }

void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  const int h = image.height();
  const int w = image.width();
  auto to8 = [](double v) { return static_cast<unsigned char>(std::lround(v * 255.0)); };
  cv::Mat out;
  if (image.channels() == 1) {
    out.create(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at<unsigned char>(y, x) = to8(image.at(0, y, x));
  } else {
    out.create(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at<cv::Vec3b>(y, x) =
            cv::Vec3b(to8(image.at(2, y, x)), to8(image.at(1, y, x)), to8(image.at(0, y, x)));
  }
  if (!cv::imwrite(path.string(), out)) throw ImageError("cannot write image: " + path.string());
}

}  // namespace nightiq
