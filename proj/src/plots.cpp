#include "nightiq/plots.hpp"

#include <algorithm>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

namespace nightiq {

namespace {

struct Range {
  double lo, hi;
};

Range padded_range(std::span<const double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo;
  double b = *hi;
  if (a == b) {
    a -= 0.5;
    b += 0.5;
  }
  const double pad = 0.05 * (b - a);
  return {a - pad, b + pad};
}

void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

void render_scatter_png(const std::filesystem::path& path, std::span<const double> predicted,
                        std::span<const double> mos, const LogisticParams& fit) {
  if (predicted.size() != mos.size() || predicted.empty()) {
    throw std::invalid_argument("scatter plot needs equally sized, non-empty series");
  }
  constexpr int kSize = 480;
  constexpr int kMargin = 48;
  cv::Mat img(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
  const Range xr = padded_range(predicted);
  const Range yr = padded_range(mos);
  const double span = kSize - 2 * kMargin;
  auto px = [&](double x) { return kMargin + (x - xr.lo) / (xr.hi - xr.lo) * span; };
  auto py = [&](double y) { return kSize - kMargin - (y - yr.lo) / (yr.hi - yr.lo) * span; };

  cv::rectangle(img, {kMargin, kMargin}, {kSize - kMargin, kSize - kMargin}, cv::Scalar(0, 0, 0), 1);
  cv::putText(img, "objective score", {kSize / 2 - 60, kSize - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, "MOS", {6, kMargin - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);

  std::vector<cv::Point> curve;
  for (int i = 0; i <= 200; ++i) {
    const double x = xr.lo + (xr.hi - xr.lo) * i / 200.0;
    const double y = std::clamp(logistic5(x, fit), yr.lo, yr.hi);
    curve.emplace_back(static_cast<int>(px(x)), static_cast<int>(py(y)));
  }
  cv::polylines(img, curve, false, cv::Scalar(40, 40, 220), 2, cv::LINE_AA);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    cv::circle(img, {static_cast<int>(px(predicted[i])), static_cast<int>(py(mos[i]))}, 3,
               cv::Scalar(200, 90, 30), cv::FILLED, cv::LINE_AA);
  }
  write_png(path, img);
}

void render_heatmap_png(const std::filesystem::path& path, std::span<const double> values,
                        int rows, int cols, int cell_pixels) {
  if (rows < 1 || cols < 1 || values.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("heatmap dimensions do not match the value count");
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  cv::Mat gray(rows, cols, CV_8UC1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = values[static_cast<std::size_t>(r) * cols + c];
      const double t = *hi > *lo ? (v - *lo) / (*hi - *lo) : 0.5;
      gray.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(255.0 * t));
    }
  }
  cv::Mat big;
  cv::resize(gray, big, {cols * cell_pixels, rows * cell_pixels}, 0, 0, cv::INTER_NEAREST);
  cv::Mat color;
  cv::applyColorMap(big, color, cv::COLORMAP_JET);
  write_png(path, color);
}

}  // namespace nightiq
