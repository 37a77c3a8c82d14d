#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "lrsiam/tensor.hpp"

namespace lrsiam {

// "16x12" is width x height. Tensors are row-major [height, width, channels].
inline constexpr std::size_t kLRWidth = 16;
inline constexpr std::size_t kLRHeight = 12;
inline constexpr std::size_t kFlowChannels = 20;
inline constexpr std::size_t kFlowOffsets = kFlowChannels / 2;

/// Source video: frames packed as [T, H, W, 3], values in [0, 1].
struct HRVideo {
  std::string id;
  std::size_t label = 0;
  Tensor frames;

  std::size_t num_frames() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }
};

/// Degraded 16x12 video: frames [T, 12, 16, 3]; `flow` is [T, 12, 16, 20]
/// once flow stacks have been attached.
struct LRVideo {
  std::string id;
  std::string source_id;
  std::size_t transform_index = 0;
  std::size_t label = 0;
  Tensor frames;
  std::optional<Tensor> flow;

  std::size_t num_frames() const { return frames.dim(0); }
};

/// Copies frame t out of a packed [T, ...] tensor.
inline Tensor frame_at(const Tensor& packed, std::size_t t) {
  const Shape& s = packed.shape();
  if (t >= s[0]) throw ShapeError("frame index " + std::to_string(t) + " out of range for " + shape_str(s));
  const std::size_t inner = packed.size() / s[0];
  Shape fs(s.begin() + 1, s.end());
  std::vector<float> data(packed.data().begin() + static_cast<std::ptrdiff_t>(t * inner),
                          packed.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * inner));
  return Tensor(std::move(fs), std::move(data));
}

}  // namespace lrsiam
