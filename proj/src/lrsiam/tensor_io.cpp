#include "lrsiam/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "lrsiam/rng.hpp"

namespace lrsiam {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

const char* to_string(IoErrc code) {
  switch (code) {
    case IoErrc::open_failed: return "open failed";
    case IoErrc::bad_magic: return "bad magic";
    case IoErrc::unsupported_version: return "unsupported version";
    case IoErrc::bad_dtype: return "bad dtype";
    case IoErrc::truncated: return "truncated payload";
    case IoErrc::dim_overflow: return "dim overflow";
    case IoErrc::empty_dim: return "empty dimension";
    case IoErrc::non_finite: return "non-finite value";
    case IoErrc::trailing_data: return "trailing data";
    case IoErrc::write_failed: return "write failed";
  }
  return "unknown";
}

namespace {

constexpr std::array<char, 4> kTensorMagic{'L', 'R', 'S', 'V'};
constexpr std::array<char, 4> kCheckpointMagic{'L', 'R', 'C', 'K'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError(IoErrc::open_failed, path.string());
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError(IoErrc::write_failed, path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError(IoErrc::open_failed, path.string());
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0, std::ios::beg);
  }
  std::uint64_t remaining() const { return size_ - pos_; }
  void bytes(void* p, std::size_t n, const char* what) {
    if (n > remaining()) {
      throw IoError(IoErrc::truncated, path_.string() + ": expected " + std::to_string(n) +
                                           " bytes of " + what + ", " +
                                           std::to_string(remaining()) + " left");
    }
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError(IoErrc::truncated, path_.string() + ": read of " + what + " failed");
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v = 0;
    bytes(&v, sizeof v, what);
    return v;
  }
  const std::filesystem::path& path() const { return path_; }
  void expect_end() const {
    if (remaining() != 0) {
      throw IoError(IoErrc::trailing_data,
                    path_.string() + ": " + std::to_string(remaining()) + " bytes after the last record");
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::uint64_t pos_ = 0;
};

void check_writable(const Shape& shape, std::span<const float> data, const std::string& where) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw IoError(IoErrc::dim_overflow, where + ": rank " + std::to_string(shape.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw IoError(IoErrc::empty_dim, where + ": shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw IoError(IoErrc::dim_overflow, where + ": shape " + shape_str(shape) + " vs " +
                                            std::to_string(data.size()) + " values");
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw IoError(IoErrc::non_finite, where);
  }
}

void write_shape_and_payload(Writer& w, const Shape& shape, std::span<const float> data) {
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) w.u64(d);
  w.bytes(data.data(), data.size() * sizeof(float));
}

Tensor read_shape_and_payload(Reader& r, const std::string& where) {
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > kMaxRank) {
    throw IoError(IoErrc::dim_overflow, where + ": rank " + std::to_string(rank));
  }
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    const std::uint64_t v = r.u64("dims");
    if (v == 0) throw IoError(IoErrc::empty_dim, where);
    if (numel > std::numeric_limits<std::uint64_t>::max() / 4 / v) {
      throw IoError(IoErrc::dim_overflow, where + ": element count overflows");
    }
    numel *= v;
    d = static_cast<std::size_t>(v);
  }
  if (numel * sizeof(float) > r.remaining()) {
    throw IoError(IoErrc::truncated, where + ": payload needs " +
                                         std::to_string(numel * sizeof(float)) + " bytes, " +
                                         std::to_string(r.remaining()) + " left");
  }
  std::vector<float> data(static_cast<std::size_t>(numel));
  r.bytes(data.data(), data.size() * sizeof(float), "payload");
  for (float v : data) {
    if (!std::isfinite(v)) throw IoError(IoErrc::non_finite, where);
  }
  return Tensor(std::move(shape), std::move(data));
}

void read_magic(Reader& r, const std::array<char, 4>& magic) {
  std::array<char, 4> m{};
  r.bytes(m.data(), m.size(), "magic");
  if (m != magic) throw IoError(IoErrc::bad_magic, r.path().string());
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Shape& shape,
                  std::span<const float> data) {
  check_writable(shape, data, path.string());
  Writer w(path);
  w.bytes(kTensorMagic.data(), kTensorMagic.size());
  w.u32(kTensorFileVersion);
  w.u32(kDtypeF32);
  write_shape_and_payload(w, shape, data);
  w.finish();
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_tensor(path, t.shape(), t.data());
}

Tensor read_tensor(const std::filesystem::path& path) {
  Reader r(path);
  read_magic(r, kTensorMagic);
  const std::uint32_t version = r.u32("version");
  if (version == 0 || version > kTensorFileVersion) {
    throw IoError(IoErrc::unsupported_version,
                  path.string() + ": version " + std::to_string(version));
  }
  const std::uint32_t dtype = r.u32("dtype");
  if (dtype != kDtypeF32) {
    throw IoError(IoErrc::bad_dtype, path.string() + ": dtype " + std::to_string(dtype));
  }
  Tensor t = read_shape_and_payload(r, path.string());
  r.expect_end();
  return t;
}

void save_checkpoint(const std::filesystem::path& path, std::uint64_t fingerprint,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  for (const auto& [name, t] : tensors) check_writable(t->shape(), t->data(), name);
  Writer w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u64(fingerprint);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    write_shape_and_payload(w, t->shape(), t->data());
  }
  w.finish();
}

CheckpointData load_checkpoint(const std::filesystem::path& path,
                               std::uint64_t expected_fingerprint,
                               const std::function<void(const std::string&)>& warn) {
  Reader r(path);
  read_magic(r, kCheckpointMagic);
  const std::uint32_t version = r.u32("version");
  if (version == 0 || version > kCheckpointVersion) {
    throw IoError(IoErrc::unsupported_version,
                  path.string() + ": version " + std::to_string(version));
  }
  CheckpointData ck;
  ck.fingerprint = r.u64("fingerprint");
  if (expected_fingerprint != 0 && ck.fingerprint != expected_fingerprint && warn) {
    warn("checkpoint " + path.string() + " was written with a different configuration " +
         "(fingerprint mismatch)");
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    if (len > r.remaining()) {
      throw IoError(IoErrc::truncated, path.string() + ": tensor name");
    }
    std::string name(len, '\0');
    r.bytes(name.data(), len, "name");
    ck.tensors.push_back({name, read_shape_and_payload(r, path.string() + ":" + name)});
  }
  r.expect_end();
  return ck;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::open_failed, path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

}  // namespace lrsiam
