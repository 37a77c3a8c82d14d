#include "lrsiam/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lrsiam/transform.hpp"

namespace lrsiam {

namespace {

struct Plane {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> d;

  Plane() = default;
  Plane(std::size_t h_, std::size_t w_, float fill = 0.0f) : h(h_), w(w_), d(h_ * w_, fill) {}
  float& at(std::size_t y, std::size_t x) { return d[y * w + x]; }
  float at(std::size_t y, std::size_t x) const { return d[y * w + x]; }
};

Plane to_plane(const Tensor& t, float scale = 1.0f) {
  Plane p(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < p.d.size(); ++i) p.d[i] = t[i] * scale;
  return p;
}

Tensor to_tensor(const Plane& p) { return Tensor({p.h, p.w}, p.d); }

Plane half_size(const Plane& p, std::size_t h, std::size_t w) {
  Tensor t = average_downsample(Tensor({p.h, p.w, 1}, p.d), h, w);
  Plane out(h, w);
  std::copy(t.data().begin(), t.data().end(), out.d.begin());
  return out;
}

float sample_bilinear(const Plane& p, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(p.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(p.h - 1));
  const auto x0 = static_cast<std::size_t>(x);
  const auto y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, p.w - 1);
  const std::size_t y1 = std::min(y0 + 1, p.h - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  return static_cast<float>((1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) +
                            fy * ((1 - fx) * p.at(y1, x0) + fx * p.at(y1, x1)));
}

/// Bilinear resize of a flow component with pixel-centre alignment, values
/// multiplied by `gain`.
Plane upsample_flow(const Plane& p, std::size_t h, std::size_t w, double gain) {
  Plane out(h, w);
  const double sx = static_cast<double>(p.w) / static_cast<double>(w);
  const double sy = static_cast<double>(p.h) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      out.at(y, x) = static_cast<float>(gain * sample_bilinear(p, fx, fy));
    }
  }
  return out;
}

void refine_level(const Plane& i1, const Plane& i2, Plane& u, Plane& v, double alpha,
                  std::size_t iterations) {
  const std::size_t h = i1.h;
  const std::size_t w = i1.w;
  Plane warped(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float du = u.at(y, x);
      const float dv = v.at(y, x);
      warped.at(y, x) = (du == 0.0f && dv == 0.0f)
                            ? i2.at(y, x)
                            : sample_bilinear(i2, static_cast<double>(x) + du, static_cast<double>(y) + dv);
    }
  }

  std::vector<float> ix(h * w), iy(h * w), it(h * w), inv(h * w);
  const float a2 = static_cast<float>(alpha * alpha);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y > 0 ? y - 1 : 0;
    const std::size_t yp = std::min(y + 1, h - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x > 0 ? x - 1 : 0;
      const std::size_t xp = std::min(x + 1, w - 1);
      auto avg = [&](std::size_t yy, std::size_t xx) {
        return 0.5f * (i1.at(yy, xx) + warped.at(yy, xx));
      };
      const float gx = 0.5f * (avg(y, xp) - avg(y, xm));
      const float gy = 0.5f * (avg(yp, x) - avg(ym, x));
      const std::size_t k = y * w + x;
      ix[k] = gx;
      iy[k] = gy;
      it[k] = warped.at(y, x) - i1.at(y, x);
      inv[k] = 1.0f / (a2 + gx * gx + gy * gy);
    }
  }

  // Padded (h+2)x(w+2) buffers; borders replicate the edge each sweep.
  const std::size_t pw = w + 2;
  std::vector<float> pu((h + 2) * pw), pv((h + 2) * pw);
  const std::vector<float> u0 = u.d;
  const std::vector<float> v0 = v.d;
  for (std::size_t y = 0; y < h; ++y) {
    std::copy(u.d.begin() + static_cast<std::ptrdiff_t>(y * w), u.d.begin() + static_cast<std::ptrdiff_t>((y + 1) * w), pu.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1));
    std::copy(v.d.begin() + static_cast<std::ptrdiff_t>(y * w), v.d.begin() + static_cast<std::ptrdiff_t>((y + 1) * w), pv.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1));
  }
  auto pad = [&](std::vector<float>& p) {
    for (std::size_t y = 1; y <= h; ++y) {
      p[y * pw] = p[y * pw + 1];
      p[y * pw + w + 1] = p[y * pw + w];
    }
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(pw), p.begin() + static_cast<std::ptrdiff_t>(2 * pw), p.begin());
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(h * pw), p.begin() + static_cast<std::ptrdiff_t>((h + 1) * pw), p.begin() + static_cast<std::ptrdiff_t>((h + 1) * pw));
  };
  std::vector<float> nu = pu, nv = pv;
  for (std::size_t iter = 0; iter < iterations; ++iter) {
    pad(pu);
    pad(pv);
    for (std::size_t y = 0; y < h; ++y) {
      const float* ur = pu.data() + (y + 1) * pw + 1;
      const float* vr = pv.data() + (y + 1) * pw + 1;
      float* uo = nu.data() + (y + 1) * pw + 1;
      float* vo = nv.data() + (y + 1) * pw + 1;
      const std::size_t k0 = y * w;
      for (std::size_t x = 0; x < w; ++x) {
        const float ub = 0.25f * (ur[x - 1] + ur[x + 1] + ur[x - pw] + ur[x + pw]);
        const float vb = 0.25f * (vr[x - 1] + vr[x + 1] + vr[x - pw] + vr[x + pw]);
        const std::size_t k = k0 + x;
        const float r = (ix[k] * (ub - u0[k]) + iy[k] * (vb - v0[k]) + it[k]) * inv[k];
        uo[x] = ub - ix[k] * r;
        vo[x] = vb - iy[k] * r;
      }
    }
    std::swap(pu, nu);
    std::swap(pv, nv);
  }
  for (std::size_t y = 0; y < h; ++y) {
    std::copy(pu.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1), pu.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1 + w), u.d.begin() + static_cast<std::ptrdiff_t>(y * w));
    std::copy(pv.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1), pv.begin() + static_cast<std::ptrdiff_t>((y + 1) * pw + 1 + w), v.d.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
}

struct CubicTaps {
  std::vector<std::array<std::size_t, 4>> idx;
  std::vector<std::array<double, 4>> wgt;
};

CubicTaps cubic_taps(std::size_t src, std::size_t dst) {
  CubicTaps taps;
  taps.idx.resize(dst);
  taps.wgt.resize(dst);
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    const double pos = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const double base = std::floor(pos);
    const double t = pos - base;
    const std::array<double, 4> w{((-0.5 * t + 1.0) * t - 0.5) * t, (1.5 * t - 2.5) * t * t + 1.0,
                                  ((-1.5 * t + 2.0) * t + 0.5) * t, (0.5 * t - 0.5) * t * t};
    const double total = w[0] + w[1] + w[2] + w[3];
    for (int k = 0; k < 4; ++k) {
      const long s = std::clamp(static_cast<long>(base) - 1 + k, 0L, static_cast<long>(src) - 1);
      taps.idx[o][static_cast<std::size_t>(k)] = static_cast<std::size_t>(s);
      taps.wgt[o][static_cast<std::size_t>(k)] = w[static_cast<std::size_t>(k)] / total;
    }
  }
  return taps;
}

}  // namespace

Tensor rgb_to_gray(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3) {
    throw ShapeError("rgb_to_gray: expected HxWx3, got " + shape_str(frame.shape()));
  }
  const std::size_t n = frame.dim(0) * frame.dim(1);
  Tensor out({frame.dim(0), frame.dim(1)});
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = 0.299f * frame[3 * i] + 0.587f * frame[3 * i + 1] + 0.114f * frame[3 * i + 2];
  }
  return out;
}

Tensor bicubic_resize(const Tensor& image, std::size_t out_h, std::size_t out_w, bool clamp01) {
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("bicubic_resize: target dims must be >= 1");
  if (image.rank() != 2 && image.rank() != 3) {
    throw ShapeError("bicubic_resize: expected HxW or HxWxC, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const std::size_t c = image.rank() == 3 ? image.dim(2) : 1;
  Shape os = image.rank() == 3 ? Shape{out_h, out_w, c} : Shape{out_h, out_w};
  if (h == out_h && w == out_w) return image;

  const CubicTaps tx = cubic_taps(w, out_w);
  const CubicTaps ty = cubic_taps(h, out_h);
  std::vector<double> rows(h * out_w * c, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += tx.wgt[ox][k] * image[(y * w + tx.idx[ox][k]) * c + ch];
        rows[(y * out_w + ox) * c + ch] = acc;
      }
    }
  }
  Tensor out(os);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += ty.wgt[oy][k] * rows[(ty.idx[oy][k] * out_w + ox) * c + ch];
        if (clamp01) acc = std::clamp(acc, 0.0, 1.0);
        out[(oy * out_w + ox) * c + ch] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

HornSchunckFlow::HornSchunckFlow(double alpha, std::size_t iterations, std::size_t min_level_size)
    : alpha_(alpha), iterations_(iterations), min_level_size_(std::max<std::size_t>(min_level_size, 2)) {
  if (!(alpha > 0.0)) throw std::invalid_argument("HornSchunckFlow: alpha must be > 0");
  if (iterations == 0) throw std::invalid_argument("HornSchunckFlow: iterations must be >= 1");
}

FlowField HornSchunckFlow::estimate(const Tensor& prev, const Tensor& next) const {
  if (prev.rank() != 2 || prev.shape() != next.shape()) {
    throw ShapeError("estimate_flow: expected two HxW frames of equal size, got " +
                     shape_str(prev.shape()) + " and " + shape_str(next.shape()));
  }
  // Intensities on a 0..255 scale so alpha has its conventional magnitude.
  std::vector<std::pair<Plane, Plane>> levels;
  levels.emplace_back(to_plane(prev, 255.0f), to_plane(next, 255.0f));
  while (levels.back().first.h / 2 >= min_level_size_ && levels.back().first.w / 2 >= min_level_size_) {
    const Plane& a = levels.back().first;
    const Plane& b = levels.back().second;
    const std::size_t h = a.h / 2;
    const std::size_t w = a.w / 2;
    levels.emplace_back(half_size(a, h, w), half_size(b, h, w));
  }

  Plane u;
  Plane v;
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
    const Plane& i1 = it->first;
    if (u.d.empty()) {
      u = Plane(i1.h, i1.w);
      v = Plane(i1.h, i1.w);
    } else {
      const double gx = static_cast<double>(i1.w) / static_cast<double>(u.w);
      const double gy = static_cast<double>(i1.h) / static_cast<double>(u.h);
      u = upsample_flow(u, i1.h, i1.w, gx);
      v = upsample_flow(v, i1.h, i1.w, gy);
    }
    refine_level(i1, it->second, u, v, alpha_, iterations_);
  }
  return {to_tensor(u), to_tensor(v)};
}

FlowField estimate_flow(const Tensor& prev, const Tensor& next, std::size_t iterations,
                        double alpha) {
  return HornSchunckFlow(alpha, iterations).estimate(prev, next);
}

FlowField lr_pair_flow(const Tensor& prev_rgb, const Tensor& next_rgb,
                       const FlowProvider& provider, const FlowConfig& cfg) {
  const std::size_t lh = prev_rgb.dim(0);
  const std::size_t lw = prev_rgb.dim(1);
  const Tensor a = bicubic_resize(rgb_to_gray(prev_rgb), cfg.upscale_height, cfg.upscale_width);
  const Tensor b = bicubic_resize(rgb_to_gray(next_rgb), cfg.upscale_height, cfg.upscale_width);
  FlowField hr = provider.estimate(a, b);
  const double sx = static_cast<double>(cfg.upscale_width) / static_cast<double>(lw);
  const double sy = static_cast<double>(cfg.upscale_height) / static_cast<double>(lh);
  Tensor u = average_downsample(hr.u.reshaped({cfg.upscale_height, cfg.upscale_width, 1}), lh, lw);
  Tensor v = average_downsample(hr.v.reshaped({cfg.upscale_height, cfg.upscale_width, 1}), lh, lw);
  for (auto& x : u.data()) x = static_cast<float>(x / sx);
  for (auto& x : v.data()) x = static_cast<float>(x / sy);
  return {u.reshaped({lh, lw}), v.reshaped({lh, lw})};
}

namespace {

/// offsets[d] is the flow for offset d.
Tensor assemble_stack(const std::vector<const FlowField*>& offsets, std::size_t h, std::size_t w) {
  Tensor out({h, w, kFlowChannels});
  for (std::size_t d = 0; d < kFlowOffsets; ++d) {
    const FlowField& f = *offsets[d];
    for (std::size_t i = 0; i < h * w; ++i) {
      out[i * kFlowChannels + 2 * d] = f.u[i];
      out[i * kFlowChannels + 2 * d + 1] = f.v[i];
    }
  }
  return out;
}

void require_pairs(const LRVideo& video) {
  if (video.frames.rank() != 4 || video.num_frames() < 2) {
    throw ShapeError("flow_stack: video " + video.id + " needs at least 2 frames, got " +
                     shape_str(video.frames.shape()));
  }
}

}  // namespace

Tensor flow_stack(const LRVideo& video, std::size_t t, const FlowProvider& provider,
                  const FlowConfig& cfg) {
  require_pairs(video);
  const std::size_t frames = video.num_frames();
  if (t >= frames) throw std::out_of_range("flow_stack: anchor frame out of range");
  const std::size_t last = frames - 2;
  const std::size_t first = std::min(t, last);
  const std::size_t stop = std::min(t + kFlowOffsets - 1, last);
  std::vector<FlowField> pairs;
  for (std::size_t p = first; p <= stop; ++p) {
    pairs.push_back(lr_pair_flow(frame_at(video.frames, p), frame_at(video.frames, p + 1), provider, cfg));
  }
  std::vector<const FlowField*> offsets;
  for (std::size_t d = 0; d < kFlowOffsets; ++d) offsets.push_back(&pairs[std::min(t + d, last) - first]);
  return assemble_stack(offsets, video.frames.dim(1), video.frames.dim(2));
}

Tensor flow_stacks(const LRVideo& video, const FlowProvider& provider, const FlowConfig& cfg) {
  require_pairs(video);
  const std::size_t frames = video.num_frames();
  const std::size_t h = video.frames.dim(1);
  const std::size_t w = video.frames.dim(2);
  std::vector<FlowField> pairs;
  pairs.reserve(frames - 1);
  for (std::size_t p = 0; p + 1 < frames; ++p) {
    pairs.push_back(lr_pair_flow(frame_at(video.frames, p), frame_at(video.frames, p + 1), provider, cfg));
  }
  Tensor out({frames, h, w, kFlowChannels});
  const std::size_t per = h * w * kFlowChannels;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<const FlowField*> offsets;
    for (std::size_t d = 0; d < kFlowOffsets; ++d) offsets.push_back(&pairs[std::min(t + d, frames - 2)]);
    Tensor s = assemble_stack(offsets, h, w);
    std::copy(s.data().begin(), s.data().end(), out.ptr() + t * per);
  }
  return out;
}

}  // namespace lrsiam
