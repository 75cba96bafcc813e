#include "nightiq/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "nightiq/nn.hpp"

namespace nightiq {

namespace {

struct Wave {
  double fx, fy, phase;
  double rgb[3];
};

std::vector<Wave> random_scene(Rng& rng) {
  std::uniform_real_distribution<double> freq(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> color(0.2, 1.0);
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    w.fx = freq(rng);
    w.fy = freq(rng);
    w.phase = phase(rng);
    for (double& c : w.rgb) c = color(rng);
  }
  return waves;
}

}  // namespace

DatasetManifest write_synthetic_corpus(const std::filesystem::path& dir,
                                       const SyntheticCorpusOptions& options) {
  if (options.count < 1 || options.images_per_content < 1) {
    throw std::invalid_argument("synthetic corpus needs count >= 1 and images_per_content >= 1");
  }
  std::filesystem::create_directories(dir);
  Rng rng(options.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int h = options.size.height;
  const int w = options.size.width;

  // Evenly spread qualities, shuffled so that content and quality are unrelated.
  std::vector<double> qualities(options.count);
  for (int i = 0; i < options.count; ++i) {
    qualities[i] = options.count == 1 ? 0.5 : static_cast<double>(i) / (options.count - 1);
  }
  std::shuffle(qualities.begin(), qualities.end(), rng);

  DatasetManifest manifest;
  std::vector<Wave> scene;
  for (int i = 0; i < options.count; ++i) {
    const int content = i / options.images_per_content;
    if (i % options.images_per_content == 0) scene = random_scene(rng);
    const double q = qualities[i];
    const double exposure = 0.08 + 0.5 * q;
    const double sigma = 0.08 * (1.0 - q);
    ImageTensor img(h, w, 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) / w;
        const double v = static_cast<double>(y) / h;
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (const auto& wave : scene) {
            s += wave.rgb[c] *
                 (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (wave.fx * u + wave.fy * v) + wave.phase));
          }
          const double value = exposure * s / 3.0 + sigma * noise(rng);
          img.set(c, y, x, std::clamp(value, 0.0, 1.0));
        }
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    save_image(dir / name, img);
    char cid[32];
    std::snprintf(cid, sizeof(cid), "scene_%03d", content);
    manifest.records.push_back(
        SampleRecord{(dir / name).string(), q, q, cid, "", "synthetic"});
  }
  DatasetManifest on_disk = manifest;
  for (auto& r : on_disk.records) r.image_path = std::filesystem::path(r.image_path).filename().string();
  save_manifest(dir / "manifest.csv", on_disk);
  return manifest;
}

}  // namespace nightiq
