#include "lrsiam/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lrsiam/tensor_io.hpp"

namespace lrsiam {

namespace fs = std::filesystem;

std::string to_string(ToyMotion m) {
  switch (m) {
    case ToyMotion::translate_left: return "translate_left";
    case ToyMotion::translate_right: return "translate_right";
    case ToyMotion::translate_up: return "translate_up";
    case ToyMotion::translate_down: return "translate_down";
    case ToyMotion::rotate_cw: return "rotate_cw";
    case ToyMotion::rotate_ccw: return "rotate_ccw";
    case ToyMotion::grow: return "grow";
    case ToyMotion::shrink: return "shrink";
    case ToyMotion::static_scene: return "static";
    case ToyMotion::oscillate_horizontal: return "oscillate_horizontal";
  }
  return "unknown";
}

void ToyConfig::validate() const {
  if (num_classes < 2 || num_classes > kToyMotionCount) {
    throw std::invalid_argument("toy: num_classes must be in [2, " +
                                std::to_string(kToyMotionCount) + "]");
  }
  if (videos_per_class == 0) throw std::invalid_argument("toy: videos_per_class must be positive");
  if (frames < 16) throw std::invalid_argument("toy: frames must be >= 16");
  if (width == 0 || height == 0 || width % kLRWidth != 0 || height % kLRHeight != 0 ||
      width / kLRWidth != height / kLRHeight) {
    throw std::invalid_argument("toy: HR dims " + std::to_string(width) + "x" +
                                std::to_string(height) +
                                " must be 4:3 and an integer multiple of 16x12");
  }
  if (!(sprite_min > 0.0) || sprite_max < sprite_min ||
      sprite_max * 1.6 > double(std::min(width, height))) {
    throw std::invalid_argument("toy: sprite size range does not fit the frame");
  }
  if (!(speed_min > 0.0) || speed_max < speed_min) {
    throw std::invalid_argument("toy: speed range must satisfy 0 < min <= max");
  }
}

namespace {

struct VideoStyle {
  double side = 30.0;
  double speed = 1.0;
  double angle0 = 0.0;
  double phase = 0.0;
  // background: per channel base plus four plane waves
  std::array<double, 3> bg_base{};
  std::array<std::array<double, 4>, 4> bg_wave{};  // kx, ky, phase, amplitude
  std::array<double, 3> bg_tint{};
  // sprite: two colours mixed by a product of sinusoids, plus a corner mark
  std::array<double, 3> c1{};
  std::array<double, 3> c2{};
  std::array<double, 3> mark{};
  double fu = 3.0, fv = 3.0, pu = 0.0, pv = 0.0;
};

VideoStyle draw_style(const ToyConfig& cfg, std::size_t index) {
  Rng rng(substream_seed(cfg.seed, "toy-video", index));
  VideoStyle s;
  s.side = uniform_real(rng, cfg.sprite_min, cfg.sprite_max);
  s.speed = uniform_real(rng, cfg.speed_min, cfg.speed_max);
  s.angle0 = uniform_real(rng, 0.0, 90.0);
  s.phase = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
  for (auto& b : s.bg_base) b = uniform_real(rng, 0.25, 0.55);
  for (auto& w : s.bg_wave) {
    w[0] = uniform_real(rng, -0.25, 0.25);
    w[1] = uniform_real(rng, -0.25, 0.25);
    w[2] = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    w[3] = uniform_real(rng, 0.03, 0.08);
  }
  for (auto& t : s.bg_tint) t = uniform_real(rng, 0.6, 1.4);
  for (std::size_t c = 0; c < 3; ++c) {
    s.c1[c] = uniform_real(rng, 0.6, 1.0);
    s.c2[c] = uniform_real(rng, 0.0, 0.35);
    s.mark[c] = uniform_real(rng, 0.0, 1.0);
  }
  s.fu = uniform_real(rng, 2.0, 5.0);
  s.fv = uniform_real(rng, 2.0, 5.0);
  s.pu = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
  s.pv = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
  return s;
}

std::vector<SpritePose> relative_trajectory(ToyMotion motion, const VideoStyle& s,
                                            std::size_t frames) {
  constexpr double kStep = 2.0;       // HR px per frame at speed 1
  constexpr double kTurn = 6.0;       // degrees per frame
  constexpr double kGrowth = 0.035;   // log-scale per frame
  constexpr double kAmplitude = 8.0;  // HR px
  constexpr double kPeriod = 8.0;     // frames
  std::vector<SpritePose> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double ft = double(t);
    SpritePose p;
    p.angle_deg = s.angle0;
    switch (motion) {
      case ToyMotion::translate_left: p.cx = -kStep * s.speed * ft; break;
      case ToyMotion::translate_right: p.cx = kStep * s.speed * ft; break;
      case ToyMotion::translate_up: p.cy = -kStep * s.speed * ft; break;
      case ToyMotion::translate_down: p.cy = kStep * s.speed * ft; break;
      case ToyMotion::rotate_cw: p.angle_deg += kTurn * s.speed * ft; break;
      case ToyMotion::rotate_ccw: p.angle_deg -= kTurn * s.speed * ft; break;
      case ToyMotion::grow: p.scale = 0.8 * std::exp(kGrowth * s.speed * ft); break;
      case ToyMotion::shrink: p.scale = 1.25 * std::exp(-kGrowth * s.speed * ft); break;
      case ToyMotion::static_scene: break;
      case ToyMotion::oscillate_horizontal:
        p.cx = kAmplitude * s.speed * std::sin(2.0 * std::numbers::pi * ft / kPeriod + s.phase);
        break;
    }
    out[t] = p;
  }
  return out;
}

double background(const VideoStyle& s, std::size_t c, double x, double y) {
  double v = s.bg_base[c];
  for (const auto& w : s.bg_wave) v += w[3] * s.bg_tint[c] * std::sin(w[0] * x + w[1] * y + w[2]);
  return v;
}

// Sprite colour at local coordinates (u, v) in [-1, 1]^2.
double sprite_colour(const VideoStyle& s, std::size_t c, double u, double v) {
  if (u > 0.45 && v < -0.45) return s.mark[c];
  const double m = 0.5 + 0.5 * std::sin(s.fu * u + s.pu) * std::sin(s.fv * v + s.pv);
  return m * s.c1[c] + (1.0 - m) * s.c2[c];
}

}  // namespace

std::vector<SpritePose> toy_trajectory(const ToyConfig& cfg, std::size_t index) {
  cfg.validate();
  const VideoStyle s = draw_style(cfg, index);
  const auto motion = static_cast<ToyMotion>(index / cfg.videos_per_class);
  auto traj = relative_trajectory(motion, s, cfg.frames);
  double max_scale = 0.0;
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& p : traj) {
    max_scale = std::max(max_scale, p.scale);
    lo_x = std::min(lo_x, p.cx);
    hi_x = std::max(hi_x, p.cx);
    lo_y = std::min(lo_y, p.cy);
    hi_y = std::max(hi_y, p.cy);
  }
  const double radius = 0.5 * std::sqrt(2.0) * s.side * max_scale + 1.0;
  // Place the path so the sprite stays fully inside the frame when possible.
  Rng rng(substream_seed(cfg.seed, "toy-position", index));
  auto place = [&](double lo, double hi, double extent) {
    const double min_off = radius - lo;
    const double max_off = extent - radius - hi;
    if (max_off <= min_off) return 0.5 * (extent - lo - hi);
    return uniform_real(rng, min_off, max_off);
  };
  const double ox = place(lo_x, hi_x, double(cfg.width));
  const double oy = place(lo_y, hi_y, double(cfg.height));
  for (auto& p : traj) {
    p.cx += ox;
    p.cy += oy;
  }
  return traj;
}

HRVideo render_toy_video(const ToyConfig& cfg, std::size_t index) {
  cfg.validate();
  if (index >= cfg.num_classes * cfg.videos_per_class) {
    throw std::out_of_range("toy: video index " + std::to_string(index) + " out of range");
  }
  const VideoStyle s = draw_style(cfg, index);
  const auto traj = toy_trajectory(cfg, index);
  const std::size_t label = index / cfg.videos_per_class;
  const std::size_t h = cfg.height;
  const std::size_t w = cfg.width;

  // Static background, rendered once.
  std::vector<double> bg(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        bg[(y * w + x) * 3 + c] = background(s, c, double(x) + 0.5, double(y) + 0.5);
      }
    }
  }

  HRVideo video;
  video.id = to_string(static_cast<ToyMotion>(label)) + "_" +
             std::to_string(index % cfg.videos_per_class + 1000).substr(1);
  video.label = label;
  video.frames = Tensor({cfg.frames, h, w, 3});
  constexpr int kSub = 3;  // supersampling per axis for anti-aliased edges
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    const SpritePose& p = traj[t];
    const double rad = p.angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double half = 0.5 * s.side * p.scale;
    const double reach = half * std::sqrt(2.0) + 1.0;
    float* dst = video.frames.ptr() + t * h * w * 3;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc[3] = {0.0, 0.0, 0.0};
        const bool near = std::abs(double(x) + 0.5 - p.cx) <= reach &&
                          std::abs(double(y) + 0.5 - p.cy) <= reach;
        if (!near) {
          for (std::size_t c = 0; c < 3; ++c) acc[c] = bg[(y * w + x) * 3 + c];
        } else {
          for (int sy = 0; sy < kSub; ++sy) {
            for (int sx = 0; sx < kSub; ++sx) {
              const double px = double(x) + (sx + 0.5) / kSub - p.cx;
              const double py = double(y) + (sy + 0.5) / kSub - p.cy;
              // rotate into sprite-local frame
              const double u = (cs * px + sn * py) / half;
              const double v = (-sn * px + cs * py) / half;
              const bool inside = std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
              for (std::size_t c = 0; c < 3; ++c) {
                acc[c] += inside ? sprite_colour(s, c, u, v) : bg[(y * w + x) * 3 + c];
              }
            }
          }
          for (double& a : acc) a /= kSub * kSub;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          dst[(y * w + x) * 3 + c] = static_cast<float>(std::clamp(acc[c], 0.0, 1.0));
        }
      }
    }
  }
  return video;
}

DatasetManifest gen_toy_dataset(const ToyConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir / "hr");
  DatasetManifest m;
  m.name = "toy";
  m.kind = ManifestKind::hr;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    m.class_names.push_back(to_string(static_cast<ToyMotion>(c)));
  }
  const std::size_t total = cfg.num_classes * cfg.videos_per_class;
  for (std::size_t i = 0; i < total; ++i) {
    HRVideo v = render_toy_video(cfg, i);
    VideoRecord rec;
    rec.id = v.id;
    rec.path = fs::absolute(out_dir / "hr" / (v.id + ".lrsv"));
    rec.label = v.label;
    rec.frames = v.num_frames();
    rec.height = v.height();
    rec.width = v.width();
    write_tensor(rec.path, v.frames);
    m.videos.push_back(std::move(rec));
  }
  if (cfg.split_count > 0) {
    SplitOptions opt;
    opt.scheme = SplitScheme::random_half;
    opt.count = cfg.split_count;
    m.splits = make_splits(m, opt, substream_seed(cfg.seed, "splits"));
  }
  write_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace lrsiam
