#include "lrsiam/transform.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lrsiam/rng.hpp"

namespace lrsiam {

namespace {

void require_image(const Tensor& frame, const char* op) {
  if (frame.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected HxWxC frame, got " + shape_str(frame.shape()));
  }
}

struct AxisWeights {
  // For each output index, the source taps and their area weights (sum to 1).
  std::vector<std::vector<std::pair<std::size_t, double>>> taps;
};

AxisWeights area_weights(std::size_t src, std::size_t dst) {
  AxisWeights w;
  w.taps.resize(dst);
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    const double lo = static_cast<double>(o * src) / static_cast<double>(dst);
    const double hi = static_cast<double>((o + 1) * src) / static_cast<double>(dst);
    const auto first = static_cast<std::size_t>(std::floor(lo));
    const auto last = std::min(src, static_cast<std::size_t>(std::ceil(hi)));
    for (std::size_t i = first; i < last; ++i) {
      const double overlap = std::min(static_cast<double>(i + 1), hi) - std::max(static_cast<double>(i), lo);
      if (overlap > 0.0) w.taps[o].emplace_back(i, overlap / ratio);
    }
  }
  return w;
}

}  // namespace

std::size_t TransformSet::identity_index() const {
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    if (transforms[k].is_identity()) return k;
  }
  return transforms.size();
}

TransformSet build_transform_grid(std::span<const double> tx_pct, std::span<const double> ty_pct,
                                  std::span<const double> rot_deg) {
  if (tx_pct.empty() || ty_pct.empty() || rot_deg.empty()) {
    throw std::invalid_argument("build_transform_grid: translation and rotation lists must be non-empty");
  }
  auto unique = [](std::span<const double> v, const char* name) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) {
      throw std::invalid_argument(std::string("build_transform_grid: duplicate value in ") + name);
    }
  };
  unique(tx_pct, "tx list");
  unique(ty_pct, "ty list");
  unique(rot_deg, "rotation list");
  TransformSet set;
  set.transforms.reserve(tx_pct.size() * ty_pct.size() * rot_deg.size());
  for (double tx : tx_pct) {
    for (double ty : ty_pct) {
      for (double rot : rot_deg) set.transforms.push_back({tx, ty, rot, 1.0});
    }
  }
  return set;
}

TransformSet default_transform_grid() {
  const double tx[] = {-5.0, -2.5, 0.0, 2.5, 5.0};
  const double ty[] = {-5.0, 0.0, 5.0};
  const double rot[] = {-10.0, -5.0, 0.0, 5.0, 10.0};
  return build_transform_grid(tx, ty, rot);
}

Tensor apply_motion_transform(const Tensor& frame, const TransformSpec& spec) {
  require_image(frame, "apply_motion_transform");
  if (!(spec.scale > 0.0)) throw std::invalid_argument("apply_motion_transform: scale must be > 0");
  const std::size_t h = frame.dim(0);
  const std::size_t w = frame.dim(1);
  const std::size_t c = frame.dim(2);
  if (spec.is_identity()) return frame;

  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double theta = spec.rot_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double tx = spec.tx_pct / 100.0 * static_cast<double>(w);
  const double ty = spec.ty_pct / 100.0 * static_cast<double>(h);

  Tensor out(frame.shape());
  const float* src = frame.ptr();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Invert p' = s R (p - c) + c + t.
      const double dx = static_cast<double>(x) - cx - tx;
      const double dy = static_cast<double>(y) - cy - ty;
      const double sx = std::clamp((ct * dx + st * dy) / spec.scale + cx, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp((-st * dx + ct * dy) / spec.scale + cy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v00 = src[(y0 * w + x0) * c + ch];
        const double v01 = src[(y0 * w + x1) * c + ch];
        const double v10 = src[(y1 * w + x0) * c + ch];
        const double v11 = src[(y1 * w + x1) * c + ch];
        const double v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
        out[(y * w + x) * c + ch] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Tensor average_downsample(const Tensor& frame, std::size_t out_h, std::size_t out_w) {
  require_image(frame, "average_downsample");
  const std::size_t h = frame.dim(0);
  const std::size_t w = frame.dim(1);
  const std::size_t c = frame.dim(2);
  if (h < out_h || w < out_w) {
    throw ShapeError("average_downsample: frame " + shape_str(frame.shape()) +
                     " smaller than target " + std::to_string(out_w) + "x" + std::to_string(out_h));
  }
  const AxisWeights wy = area_weights(h, out_h);
  const AxisWeights wx = area_weights(w, out_w);

  // Vertical pass into a double buffer [out_h, w, c], then horizontal.
  std::vector<double> rows(out_h * w * c, 0.0);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double* dst = rows.data() + oy * w * c;
    for (const auto& [sy, wgt] : wy.taps[oy]) {
      const float* src = frame.ptr() + sy * w * c;
      for (std::size_t i = 0; i < w * c; ++i) dst[i] += wgt * src[i];
    }
  }
  Tensor out({out_h, out_w, c});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const auto& [sx, wgt] : wx.taps[ox]) acc += wgt * rows[(oy * w + sx) * c + ch];
        out[(oy * out_w + ox) * c + ch] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Tensor center_crop_4_3(const Tensor& frame) {
  require_image(frame, "center_crop_4_3");
  const std::size_t h = frame.dim(0);
  const std::size_t w = frame.dim(1);
  const std::size_t c = frame.dim(2);
  std::size_t nw = w;
  std::size_t nh = h;
  if (w * 3 > h * 4) {
    nw = h * 4 / 3;
  } else if (w * 3 < h * 4) {
    nh = w * 3 / 4;
  }
  if (nw == w && nh == h) return frame;
  if (nw == 0 || nh == 0) throw ShapeError("center_crop_4_3: frame too small " + shape_str(frame.shape()));
  const std::size_t x0 = (w - nw) / 2;
  const std::size_t y0 = (h - nh) / 2;
  Tensor out({nh, nw, c});
  for (std::size_t y = 0; y < nh; ++y) {
    const float* src = frame.ptr() + ((y0 + y) * w + x0) * c;
    std::copy(src, src + nw * c, out.ptr() + y * nw * c);
  }
  return out;
}

Tensor gaussian_blur(const Tensor& frame, double sigma) {
  require_image(frame, "gaussian_blur");
  if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return frame;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;

  const auto h = static_cast<long>(frame.dim(0));
  const auto w = static_cast<long>(frame.dim(1));
  const auto c = static_cast<long>(frame.dim(2));
  std::vector<double> tmp(static_cast<std::size_t>(h * w * c), 0.0);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (long i = -radius; i <= radius; ++i) {
        const long sx = std::clamp(x + i, 0L, w - 1);
        const double kv = k[static_cast<std::size_t>(i + radius)];
        for (long ch = 0; ch < c; ++ch) {
          tmp[static_cast<std::size_t>((y * w + x) * c + ch)] += kv * frame[static_cast<std::size_t>((y * w + sx) * c + ch)];
        }
      }
    }
  }
  Tensor out(frame.shape());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (long ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long sy = std::clamp(y + i, 0L, h - 1);
          acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>((sy * w + x) * c + ch)];
        }
        out[static_cast<std::size_t>((y * w + x) * c + ch)] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

LRVideo degrade(const HRVideo& video, const TransformSpec& spec, std::size_t transform_index,
                const DegradeConfig& cfg) {
  if (cfg.blur_sigma < 0.0 || cfg.noise_sigma < 0.0) {
    throw std::invalid_argument("degrade: blur and noise sigmas must be >= 0");
  }
  if (video.frames.rank() != 4 || video.frames.dim(3) != 3) {
    throw ShapeError("degrade: expected [T,H,W,3] frames, got " + shape_str(video.frames.shape()));
  }
  const std::size_t frames = video.num_frames();
  Rng rng(substream_seed(cfg.seed, video.id, transform_index));
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);

  Tensor out({frames, kLRHeight, kLRWidth, 3});
  const std::size_t per = kLRHeight * kLRWidth * 3;
  for (std::size_t t = 0; t < frames; ++t) {
    Tensor f = center_crop_4_3(frame_at(video.frames, t));
    if (f.dim(0) < kLRHeight || f.dim(1) < kLRWidth) {
      throw ShapeError("degrade: video " + video.id + " frame " + shape_str(f.shape()) +
                       " is smaller than 16x12 after cropping");
    }
    f = apply_motion_transform(f, spec);
    f = gaussian_blur(f, cfg.blur_sigma);
    f = average_downsample(f);
    float* dst = out.ptr() + t * per;
    for (std::size_t i = 0; i < per; ++i) {
      double v = f[i];
      if (cfg.noise_sigma > 0.0) v += noise(rng);
      dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  LRVideo lr;
  lr.id = video.id + "_k" + std::to_string(transform_index);
  lr.source_id = video.id;
  lr.transform_index = transform_index;
  lr.label = video.label;
  lr.frames = std::move(out);
  return lr;
}

}  // namespace lrsiam
