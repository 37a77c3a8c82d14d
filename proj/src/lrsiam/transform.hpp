#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lrsiam/video.hpp"

namespace lrsiam {

/// One camera motion: translation in percent of frame width/height, rotation
/// in degrees about the frame centre, uniform scale.
struct TransformSpec {
  double tx_pct = 0.0;
  double ty_pct = 0.0;
  double rot_deg = 0.0;
  double scale = 1.0;

  bool is_identity() const {
    return tx_pct == 0.0 && ty_pct == 0.0 && rot_deg == 0.0 && scale == 1.0;
  }
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

struct TransformSet {
  std::vector<TransformSpec> transforms;

  std::size_t size() const { return transforms.size(); }
  const TransformSpec& operator[](std::size_t k) const { return transforms.at(k); }
  /// Index of the identity transform, or size() if absent.
  std::size_t identity_index() const;
};

struct DegradeConfig {
  double blur_sigma = 1.0;   // HR pixels
  double noise_sigma = 0.01; // [0,1] intensity units
  std::uint64_t seed = 0;
};

/// Cartesian product, tx outermost and rotation innermost; scale fixed at 1.
TransformSet build_transform_grid(std::span<const double> tx_pct, std::span<const double> ty_pct,
                                  std::span<const double> rot_deg);

/// The 5 x 3 x 5 grid of translations and rotations used for training.
TransformSet default_transform_grid();

/// Inverse warp with bilinear sampling and edge clamping. frame is HxWxC.
Tensor apply_motion_transform(const Tensor& frame, const TransformSpec& spec);

/// Area-weighted average to 12x16xC (height x width).
Tensor average_downsample(const Tensor& frame, std::size_t out_h = kLRHeight,
                          std::size_t out_w = kLRWidth);

/// Largest centred region with width:height = 4:3.
Tensor center_crop_4_3(const Tensor& frame);

/// Separable Gaussian blur, kernel truncated at 3 sigma and renormalised,
/// edge-clamped. sigma == 0 returns the input.
Tensor gaussian_blur(const Tensor& frame, double sigma);

/// crop -> motion transform -> blur -> average downsample -> noise -> clamp,
/// applied frame by frame. Noise comes from a stream keyed by
/// (cfg.seed, video id, transform_index).
LRVideo degrade(const HRVideo& video, const TransformSpec& spec, std::size_t transform_index,
                const DegradeConfig& cfg);

}  // namespace lrsiam
