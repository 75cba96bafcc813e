#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "nightiq/evaluation.hpp"

namespace nightiq {

/// Predicted score vs MOS scatter with the fitted logistic curve overlaid.
void render_scatter_png(const std::filesystem::path& path, std::span<const double> predicted,
                        std::span<const double> mos, const LogisticParams& fit);

/// Row-major rows x cols grid of values drawn as a heatmap (warm = high).
/// Row 0 is drawn at the top.
void render_heatmap_png(const std::filesystem::path& path, std::span<const double> values,
                        int rows, int cols, int cell_pixels = 48);

}  // namespace nightiq
