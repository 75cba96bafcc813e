#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nightiq/image.hpp"

namespace nightiq {

/// Two-parameter low-light enhancer used to sweep a quality surface.
class Enhancer {
 public:
  virtual ~Enhancer() = default;
  [[nodiscard]] virtual ImageTensor enhance(const ImageTensor& image, double g, double l) const = 0;
};

/// Illumination-map enhancer: T = max over RGB, smoothed as
/// T_s = (1 - l) T + l * blur(T), output = clamp(I / max(T_s^g, 1e-3)).
/// g in [0,1] sets how strongly the map is corrected, l in [0,1] how much it is smoothed.
class IlluminationGammaEnhancer final : public Enhancer {
 public:
  [[nodiscard]] ImageTensor enhance(const ImageTensor& image, double g, double l) const override;
};

/// Runs an external program. The template may use {g}, {l}, {in} and {out};
/// {in} is a PNG written by this process, {out} must be written by the command.
class CommandEnhancer final : public Enhancer {
 public:
  explicit CommandEnhancer(std::string command_template);
  [[nodiscard]] ImageTensor enhance(const ImageTensor& image, double g, double l) const override;

 private:
  std::string template_;
};

struct TuneGrid {
  double g_min = 0.2, g_max = 1.0;
  int g_steps = 5;
  double l_min = 0.0, l_max = 0.4;
  int l_steps = 5;

  /// Throws std::invalid_argument for empty or inverted ranges.
  void validate() const;
  [[nodiscard]] std::vector<double> g_values() const;
  [[nodiscard]] std::vector<double> l_values() const;
};

/// Evenly spaced values from lo to hi inclusive (a single value when steps == 1).
std::vector<double> linspace(double lo, double hi, int steps);

struct TuneSurface {
  std::vector<double> g_values;
  std::vector<double> l_values;
  std::vector<double> scores;  // row-major: g index major, l index minor
  double best_g = 0.0;
  double best_l = 0.0;
  double best_score = 0.0;
};

/// Scores every grid point; the argmax is the first maximum in (g, l) scan order.
TuneSurface tune_surface(const ImageTensor& image, const Enhancer& enhancer, const TuneGrid& grid,
                         const std::function<double(const ImageTensor&)>& scorer);

}  // namespace nightiq
