#include "nightiq/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>

#include "nightiq/autograd.hpp"
#include "nightiq/feature.hpp"

namespace nightiq {

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::string format_param(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

ImageTensor IlluminationGammaEnhancer::enhance(const ImageTensor& image, double g, double l) const {
  if (image.channels() != 3) throw ImageError("enhancer expects an RGB image");
  if (!(l >= 0.0 && l <= 1.0)) throw std::invalid_argument("enhancer: l must lie in [0,1]");
  if (!(g >= 0.0)) throw std::invalid_argument("enhancer: g must be >= 0");
  const int h = image.height();
  const int w = image.width();
  Tensor t(Shape{1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      t.at(0, 0, y, x) = std::max({image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)});
  const auto taps = gaussian_taps(9, 2.0);
  const Tensor blurred =
      ag::separable_filter(ag::Var::constant(t), taps, 1.0, ag::Padding::kReplicate).value();
  Tensor out = image.tensor();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ts = (1.0 - l) * t.at(0, 0, y, x) + l * blurred.at(0, 0, y, x);
      const double denom = std::max(std::pow(ts, g), 1e-3);
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = image.at(c, y, x) / denom;
    }
  }
  return ImageTensor::clamped(std::move(out));
}

CommandEnhancer::CommandEnhancer(std::string command_template)
    : template_(std::move(command_template)) {
  if (template_.find("{in}") == std::string::npos || template_.find("{out}") == std::string::npos) {
    throw std::invalid_argument("enhancer command must reference {in} and {out}");
  }
}

ImageTensor CommandEnhancer::enhance(const ImageTensor& image, double g, double l) const {
  const auto dir = std::filesystem::temp_directory_path();
  std::random_device rd;
  const std::string tag = std::to_string(rd()) + "_" + std::to_string(rd());
  const auto in = dir / ("nightiq_enh_in_" + tag + ".png");
  const auto out = dir / ("nightiq_enh_out_" + tag + ".png");
  save_image(in, image);
  std::string cmd = template_;
  replace_all(cmd, "{g}", format_param(g));
  replace_all(cmd, "{l}", format_param(l));
  replace_all(cmd, "{in}", shell_quote(in.string()));
  replace_all(cmd, "{out}", shell_quote(out.string()));
  const int rc = std::system(cmd.c_str());
  std::filesystem::remove(in);
  if (rc != 0) {
    std::filesystem::remove(out);
    throw std::runtime_error("enhancer command failed (" + std::to_string(rc) + "): " + cmd);
  }
  ImageTensor result = load_image(out, ImageSize{image.height(), image.width()});
  std::filesystem::remove(out);
  return result;
}

std::vector<double> linspace(double lo, double hi, int steps) {
  if (steps < 1) throw std::invalid_argument("linspace: steps must be >= 1");
  if (steps == 1) return {lo};
  std::vector<double> v(steps);
  const int d = steps - 1;
  for (int i = 0; i < steps; ++i) v[i] = (lo * (d - i) + hi * i) / d;
  return v;
}

void TuneGrid::validate() const {
  if (g_steps < 1 || l_steps < 1) throw std::invalid_argument("tuning grid: steps must be >= 1");
  if (!(g_min <= g_max) || !(l_min <= l_max)) {
    throw std::invalid_argument("tuning grid: empty range (min > max)");
  }
}

std::vector<double> TuneGrid::g_values() const { return linspace(g_min, g_max, g_steps); }
std::vector<double> TuneGrid::l_values() const { return linspace(l_min, l_max, l_steps); }

TuneSurface tune_surface(const ImageTensor& image, const Enhancer& enhancer, const TuneGrid& grid,
                         const std::function<double(const ImageTensor&)>& scorer) {
  grid.validate();
  TuneSurface s;
  s.g_values = grid.g_values();
  s.l_values = grid.l_values();
  bool first = true;
  for (double g : s.g_values) {
    for (double l : s.l_values) {
      const double score = scorer(enhancer.enhance(image, g, l));
      s.scores.push_back(score);
      if (first || score > s.best_score) {
        s.best_score = score;
        s.best_g = g;
        s.best_l = l;
        first = false;
      }
    }
  }
  return s;
}

}  // namespace nightiq
