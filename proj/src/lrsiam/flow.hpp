#pragma once

#include <memory>
#include <string>

#include "lrsiam/video.hpp"

namespace lrsiam {

/// Per-pixel displacement in pixels: u along x (width), v along y (height).
/// Both are HxW.
struct FlowField {
  Tensor u;
  Tensor v;
};

struct FlowConfig {
  double alpha = 15.0;        // smoothness weight, for intensities on a 0..255 scale
  std::size_t iterations = 100;  // Jacobi sweeps per pyramid level
  std::size_t upscale_width = 256;
  std::size_t upscale_height = 256;
  std::size_t min_level_size = 16;  // coarsest pyramid level keeps both dims >= this
};

/// Luma 0.299 R + 0.587 G + 0.114 B of an HxWx3 frame, returned as HxW.
Tensor rgb_to_gray(const Tensor& frame);

/// Catmull-Rom bicubic resampling of HxWxC (or HxW) to out_h x out_w, pixel
/// centres aligned, edge-clamped taps. clamp01 clips the result to [0, 1].
Tensor bicubic_resize(const Tensor& image, std::size_t out_h, std::size_t out_w,
                      bool clamp01 = true);

class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  /// prev and next are HxW grayscale in [0, 1].
  virtual FlowField estimate(const Tensor& prev, const Tensor& next) const = 0;
  /// Short identifier used to key cached flow files.
  virtual std::string tag() const = 0;
};

/// Horn-Schunck with coarse-to-fine warping: at every pyramid level the next
/// frame is warped by the current estimate and `iterations` Jacobi sweeps of
/// the brightness-constancy + alpha^2 smoothness update refine it.
class HornSchunckFlow final : public FlowProvider {
 public:
  explicit HornSchunckFlow(double alpha = 15.0, std::size_t iterations = 100,
                           std::size_t min_level_size = 16);
  FlowField estimate(const Tensor& prev, const Tensor& next) const override;
  std::string tag() const override { return "hs"; }

 private:
  double alpha_;
  std::size_t iterations_;
  std::size_t min_level_size_;
};

/// Convenience wrapper over HornSchunckFlow.
FlowField estimate_flow(const Tensor& prev, const Tensor& next, std::size_t iterations,
                        double alpha);

/// Flow between two 16x12 RGB frames through the upscale / estimate /
/// downscale pipeline; displacements are returned in LR pixels.
FlowField lr_pair_flow(const Tensor& prev_rgb, const Tensor& next_rgb,
                       const FlowProvider& provider, const FlowConfig& cfg);

/// 12x16x20 stack anchored at frame t: channels [u0, v0, ..., u9, v9] where
/// offset d uses the frame pair (p, p + 1), p = min(t + d, T - 2).
Tensor flow_stack(const LRVideo& video, std::size_t t, const FlowProvider& provider,
                  const FlowConfig& cfg);

/// All stacks of a video as [T, 12, 16, 20]; each frame pair is estimated once.
Tensor flow_stacks(const LRVideo& video, const FlowProvider& provider, const FlowConfig& cfg);

}  // namespace lrsiam
