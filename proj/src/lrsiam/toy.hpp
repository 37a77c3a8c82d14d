#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrsiam/dataset.hpp"

namespace lrsiam {

enum class ToyMotion {
  translate_left,
  translate_right,
  translate_up,
  translate_down,
  rotate_cw,
  rotate_ccw,
  grow,
  shrink,
  static_scene,
  oscillate_horizontal,
};

inline constexpr std::size_t kToyMotionCount = 10;

std::string to_string(ToyMotion m);

struct ToyConfig {
  std::size_t num_classes = 10;
  std::size_t videos_per_class = 20;
  std::size_t frames = 16;
  std::size_t width = 128;
  std::size_t height = 96;
  double sprite_min = 24.0;  // sprite side length range, HR pixels
  double sprite_max = 36.0;
  double speed_min = 0.6;    // relative speed range within a class
  double speed_max = 1.0;
  std::uint64_t seed = 0;
  std::size_t split_count = 10;

  void validate() const;
};

/// Sprite pose at frame t, in HR pixels / degrees.
struct SpritePose {
  double cx = 0.0;
  double cy = 0.0;
  double angle_deg = 0.0;
  double scale = 1.0;
};

/// Renders video `index` (0-based over all classes, class-major). The result
/// depends only on (cfg, index).
HRVideo render_toy_video(const ToyConfig& cfg, std::size_t index);

/// Pose trajectory used by render_toy_video.
std::vector<SpritePose> toy_trajectory(const ToyConfig& cfg, std::size_t index);

/// Renders every video under out_dir/hr/, writes out_dir/manifest.jsonl with
/// random-half splits, and returns the manifest.
DatasetManifest gen_toy_dataset(const ToyConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace lrsiam
