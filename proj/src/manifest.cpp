#include "nightiq/manifest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace nightiq {

namespace {

constexpr const char* kHeader = "image_path,mos,content_id,device_tag,dataset_tag";
constexpr const char* kScalePrefix = "#mos_scale=";

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Comma split with minimal double-quote support ("" escapes a quote).
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += (ch == '"') ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

}  // namespace

double normalize_mos(double raw, const MosScale& scale) {
  return (raw - scale.min) / (scale.max - scale.min);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("manifest not found: " + path.string());

  DatasetManifest manifest;
  const std::filesystem::path base = path.parent_path();
  std::set<std::string> seen_paths;
  bool header_seen = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.rfind(kScalePrefix, 0) == 0) {
      if (header_seen) {
        throw ManifestError("row " + std::to_string(line_no) + ": mos_scale must precede the header");
      }
      const auto parts = split_csv(t.substr(std::string(kScalePrefix).size()));
      double lo = 0, hi = 0;
      if (parts.size() != 2 || !parse_double(parts[0], lo) || !parse_double(parts[1], hi)) {
        throw ManifestError("row " + std::to_string(line_no) + ": malformed mos_scale line");
      }
      if (!(lo < hi)) {
        throw ManifestError("row " + std::to_string(line_no) + ": mos_scale min must be < max");
      }
      manifest.mos_scale = {lo, hi};
      continue;
    }
    if (t[0] == '#') continue;
    if (!header_seen) {
      if (t != kHeader) {
        throw ManifestError("row " + std::to_string(line_no) + ": expected header '" + kHeader + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv(t);
    if (f.size() != 5) {
      throw ManifestError("row " + std::to_string(line_no) + ": expected 5 fields, found " +
                          std::to_string(f.size()));
    }
    SampleRecord r;
    if (f[0].empty()) throw ManifestError("row " + std::to_string(line_no) + ": empty image_path");
    if (!parse_double(f[1], r.raw_mos)) {
      throw ManifestError("row " + std::to_string(line_no) + ": mos is not a number: '" + f[1] + "'");
    }
    if (f[2].empty()) throw ManifestError("row " + std::to_string(line_no) + ": empty content_id");
    std::filesystem::path img(f[0]);
    r.image_path = (img.is_absolute() ? img : base / img).lexically_normal().string();
    r.content_id = f[2];
    r.device_tag = f[3];
    r.dataset_tag = f[4];
    if (!seen_paths.insert(r.image_path).second) {
      throw ManifestError("row " + std::to_string(line_no) + ": duplicate image_path " + f[0]);
    }
    manifest.records.push_back(std::move(r));
  }
  if (!header_seen) throw ManifestError("manifest has no header: " + path.string());
  if (manifest.records.empty()) throw ManifestError("manifest is empty: " + path.string());

  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    auto& r = manifest.records[i];
    r.mos = normalize_mos(r.raw_mos, manifest.mos_scale);
    if (r.mos < 0.0 || r.mos > 1.0) {
      throw ManifestError("record " + std::to_string(i + 1) + ": mos " + std::to_string(r.raw_mos) +
                          " outside mos_scale");
    }
  }
  return manifest;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest: " + path.string());
  out << std::setprecision(17);
  out << kScalePrefix << manifest.mos_scale.min << "," << manifest.mos_scale.max << "\n";
  out << kHeader << "\n";
  for (const auto& r : manifest.records) {
    out << quote_if_needed(r.image_path) << "," << r.raw_mos << "," << quote_if_needed(r.content_id)
        << "," << quote_if_needed(r.device_tag) << "," << quote_if_needed(r.dataset_tag) << "\n";
  }
}

}  // namespace nightiq
