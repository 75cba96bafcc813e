#pragma once

#include <cstdint>
#include <filesystem>

#include "nightiq/image.hpp"
#include "nightiq/manifest.hpp"

namespace nightiq {

struct SyntheticCorpusOptions {
  int count = 16;
  ImageSize size{64, 64};
  std::uint64_t seed = 0;
  int images_per_content = 1;
};

/// Night-like renderings of random smooth scenes. Each image draws a latent
/// quality q in [0,1]; higher q means brighter exposure and less sensor noise.
/// The manifest MOS is q itself, so MOS is monotone in the degradation level.
/// Writes `img_XXX.png` files and `manifest.csv` into `dir`; returns the manifest.
DatasetManifest write_synthetic_corpus(const std::filesystem::path& dir,
                                       const SyntheticCorpusOptions& options);

}  // namespace nightiq
