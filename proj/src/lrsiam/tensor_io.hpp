#pragma once

// Binary containers, little-endian throughout.
//
// TensorFile:  "LRSV" | u32 version | u32 dtype (1 = f32) | u32 rank |
//              u64 dims[rank] | f32 payload[prod(dims)]
// Checkpoint:  "LRCK" | u32 version | u64 config fingerprint | u32 count |
//              count x ( u32 name_len | name bytes | u32 rank | u64 dims[rank] |
//                        f32 payload[prod(dims)] )

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lrsiam/tensor.hpp"

namespace lrsiam {

enum class IoErrc {
  open_failed,
  bad_magic,
  unsupported_version,
  bad_dtype,
  truncated,
  dim_overflow,
  empty_dim,
  non_finite,
  trailing_data,
  write_failed,
};

const char* to_string(IoErrc code);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  IoErrc code() const { return code_; }

 private:
  IoErrc code_;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::size_t kMaxRank = 8;

void write_tensor(const std::filesystem::path& path, const Shape& shape,
                  std::span<const float> data);
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  std::uint64_t fingerprint = 0;
  std::vector<NamedTensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, std::uint64_t fingerprint,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

/// Loads every tensor. When `expected_fingerprint` is non-zero and differs from
/// the stored one, `warn` receives a message; loading still succeeds.
CheckpointData load_checkpoint(const std::filesystem::path& path,
                               std::uint64_t expected_fingerprint = 0,
                               const std::function<void(const std::string&)>& warn = {});

/// FNV-1a over the raw bytes of a file.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace lrsiam
