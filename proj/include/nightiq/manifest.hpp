#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace nightiq {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleRecord {
  std::string image_path;  // resolved against the manifest's directory
  double mos = 0.0;        // normalized to [0,1]
  double raw_mos = 0.0;    // as written in the file
  std::string content_id;
  std::string device_tag;  // may be empty
  std::string dataset_tag;
};

struct MosScale {
  double min = 0.0;
  double max = 1.0;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  MosScale mos_scale;
};

/// Affine map of a native-scale MOS into [0,1].
double normalize_mos(double raw, const MosScale& scale);

/// Parses the manifest CSV:
///
///   #mos_scale=<min>,<max>
///   image_path,mos,content_id,device_tag,dataset_tag
///   ...
///
/// The sidecar line is optional (defaults to 0,1). Relative image paths are
/// resolved against the manifest's directory. Row numbers in errors are
/// 1-based physical line numbers.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes a manifest in the same format (paths written as given).
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace nightiq
