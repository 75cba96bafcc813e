#include "nightiq/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nightiq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'N', 'I', 'Q', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto len = get<std::uint32_t>();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void get_doubles(double* dst, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw CheckpointCorruptError("checkpoint payload truncated");
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t len) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_checkpoint(const ModelCheckpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, checkpoint.format_version);
  put<std::uint64_t>(out, checkpoint.rng_seed);
  put_string(out, checkpoint.config_snapshot);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.parameter_map.size()));
  for (const auto& [name, t] : checkpoint.parameter_map) {
    put_string(out, name);
    const Shape s = t.shape();
    put<std::int32_t>(out, s.n);
    put<std::int32_t>(out, s.c);
    put<std::int32_t>(out, s.h);
    put<std::int32_t>(out, s.w);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc_of(out, out.size()));
  return out;
}

ModelCheckpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t kMinSize = sizeof(kMagic) + sizeof(std::uint32_t);
  if (bytes.size() < kMinSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointCorruptError("not a checkpoint file (bad magic or too short)");
  }
  ModelCheckpoint ck;
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointFormatVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (bytes.size() < kMinSize + sizeof(std::uint32_t)) {
    throw CheckpointCorruptError("checkpoint payload truncated");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + body, sizeof(stored_crc));
  if (stored_crc != crc_of(bytes, body)) {
    throw CheckpointCorruptError("checkpoint checksum mismatch (file corrupted or truncated)");
  }

  Reader r(bytes, body);
  r.get<std::uint64_t>();  // skip magic
  ck.format_version = r.get<std::uint32_t>();
  ck.rng_seed = r.get<std::uint64_t>();
  ck.config_snapshot = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    Shape s;
    s.n = r.get<std::int32_t>();
    s.c = r.get<std::int32_t>();
    s.h = r.get<std::int32_t>();
    s.w = r.get<std::int32_t>();
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
      throw CheckpointCorruptError("invalid array extents for " + name);
    }
    Tensor t(s);
    r.get_doubles(t.data(), t.size());
    if (!ck.parameter_map.emplace(std::move(name), std::move(t)).second) {
      throw CheckpointCorruptError("duplicate array name in checkpoint");
    }
  }
  if (r.pos() != body) throw CheckpointCorruptError("trailing bytes in checkpoint");
  return ck;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace nightiq
