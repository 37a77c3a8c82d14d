// Acceptance run: one PASS/FAIL line per criterion.
//
//   lrsiam_acceptance --config configs/toy_experiment.json --work <dir> [--only C1,C3]
//
// Data stages are cached under --work, keyed by the settings they depend on.
// The toy experiment (C5, C6) is cached by the hash of this binary, the
// resolved config and the LR manifest, so a rerun of an unchanged build reads
// the stored summary instead of retraining.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrsiam/blas.hpp"
#include "lrsiam/config.hpp"
#include "lrsiam/dataset.hpp"
#include "lrsiam/flow.hpp"
#include "lrsiam/gradcheck_suite.hpp"
#include "lrsiam/loss.hpp"
#include "lrsiam/model.hpp"
#include "lrsiam/pipeline.hpp"
#include "lrsiam/tensor_io.hpp"
#include "lrsiam/trainer.hpp"
#include "lrsiam/transform.hpp"

namespace fs = std::filesystem;
using namespace lrsiam;
using nlohmann::json;

namespace {

// Tolerances and budgets.
constexpr double kStructuralSeconds = 1.0;
constexpr double kGradTolerance = 1e-3;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradSeconds = 120.0;
constexpr double kMultiSiameseTol = 1e-6;
constexpr double kContrastiveTol = 1e-7;
constexpr std::size_t kLossInstances = 100;
constexpr double kMeanTol = 1e-6;
constexpr double kFlowRelError = 0.20;
constexpr double kMinGainPoints = 3.0;
constexpr std::size_t kExperimentSeeds = 5;
constexpr double kSecondsPerSeed = 30.0 * 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void log_line(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

// ---------------------------------------------------------------- C1

Outcome structural() {
  const auto t0 = Clock::now();
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, std::size_t got, std::size_t want) {
    if (got != want) bad.push_back(what + " " + std::to_string(got) + " != " + std::to_string(want));
  };

  expect("transforms", TransformGridConfig{}.build().size(), 75);

  const ModelConfig cfg;
  expect("pyramid intervals", cfg.pyramid_intervals(), 15);
  expect("intervals(T=16)", pyramid_intervals(16, cfg.pyramid_level).size(), 15);

  std::size_t fc1_in = 0, fc1_out = 0, fc2_out = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    if (name == "embed.fc1.weight") fc1_in = shape[0], fc1_out = shape[1];
    if (name == "embed.fc2.weight") fc2_out = shape[1];
  }
  // Per-frame features and pooling do not depend on the embedding width, so a
  // narrow head avoids allocating the 8192x8192 layer just to run the streams.
  ModelConfig narrow = cfg;
  narrow.embed_dim = 8;
  ParamSet<float> zeros;
  for (const auto& [name, shape] : parameter_shapes(narrow)) zeros.add(name, Tensor(shape));
  const Model model(narrow, std::move(zeros));
  NoGradGuard ng;
  Tensor rgb({16, kLRHeight, kLRWidth, 3}, 0.5f), flow({16, kLRHeight, kLRWidth, kFlowChannels});
  const Var<float> h = model.frame_features(Var<float>(rgb, false), Var<float>(flow, false));
  expect("h rows", h.shape()[0], 16);
  expect("h dim", h.shape()[1], 512);
  const Var<float> pooled = pyramid_pool(h, cfg.pyramid_level);
  expect("pooled", pooled.value().size(), 7680);
  expect("fc1 input", fc1_in, 7680);
  expect("fc1 output", fc1_out, 8192);
  expect("embedding", fc2_out, 8192);

  LRVideo v;
  v.frames = Tensor({3, kLRHeight, kLRWidth, 3}, 0.25f);
  FlowConfig fc;
  fc.upscale_width = fc.upscale_height = 32;
  fc.iterations = 2;
  fc.min_level_size = 8;
  const Tensor stack = flow_stack(v, 0, HornSchunckFlow(fc.alpha, fc.iterations, fc.min_level_size), fc);
  if (stack.shape() != Shape{12, 16, 20}) bad.push_back("flow stack " + shape_str(stack.shape()));

  const double secs = since(t0);
  if (secs >= kStructuralSeconds) bad.push_back("took " + fmt("%.2f", secs) + " s");
  Outcome o;
  o.pass = bad.empty();
  o.detail = o.pass ? "75 transforms, 15 intervals, h 512, pooled 7680, embed 8192, flow 16x12x20 in " +
                          fmt("%.2f", secs) + " s"
                    : bad.front();
  return o;
}

// ---------------------------------------------------------------- C2

Outcome gradients() {
  GradcheckSuiteOptions opt;
  opt.seeds = kGradSeeds;
  opt.tolerance = kGradTolerance;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case, failed;
  const auto results = run_gradcheck_suite(opt, [&](const GradcheckCaseResult& r) {
    log_line(r.name + ": max rel " + fmt("%.2e", r.max_rel_error) + ", " + fmt("%.1f", r.seconds) + " s" +
             (r.passed ? "" : " FAILED"));
    if (!r.passed && failed.empty()) failed = r.name;
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_case = r.name;
  });
  const double secs = since(t0);
  Outcome o;
  o.pass = failed.empty() && worst < kGradTolerance && secs < kGradSeconds;
  o.detail = std::to_string(results.size()) + " cases x " + std::to_string(kGradSeeds) +
             " seeds, max rel error " + fmt("%.2e", worst) + " (" + worst_case + "), " + fmt("%.1f", secs) +
             " s" + (failed.empty() ? "" : ", failed: " + failed);
  return o;
}

// ---------------------------------------------------------------- C3

double brute_multi(const TensorD& b1, const TensorD& b2, double m) {
  const std::size_t n = b1.dim(0), d = b1.dim(1);
  auto d2 = [d](const double* a, const double* b) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  double pos = 0, cross = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = k + 1; l < n; ++l) pos += d2(b1.ptr() + k * d, b1.ptr() + l * d);
    for (std::size_t j = 0; j < n; ++j) cross += d2(b1.ptr() + k * d, b2.ptr() + j * d);
  }
  return pos + std::max(0.0, double(n * n) * m * m - cross);
}

Outcome loss_oracle() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 0.4);
  double worst_multi = 0.0, worst_pair = 0.0;
  for (std::size_t i = 0; i < kLossInstances; ++i) {
    const std::size_t n = 1 + i % 5, d = 1 + (i / 5) % 8;
    const double m = 0.25 + 0.25 * double(i % 9);
    TensorD b1({n, d}), b2({n, d});
    for (auto& v : b1.data()) v = g(rng);
    for (auto& v : b2.data()) v = g(rng);
    const double got = multi_siamese_loss(Var<double>(b1), Var<double>(b2), m).value().item();
    worst_multi = std::max(worst_multi, std::abs(got - brute_multi(b1, b2, m)));

    TensorD x({d}), y({d});
    for (auto& v : x.data()) v = g(rng);
    for (auto& v : y.data()) v = g(rng);
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    const double dist = std::sqrt(s), hinge = std::max(0.0, m - dist);
    const double pos = contrastive_pair(Var<double>(x), Var<double>(y), PairLabel::positive, m).value().item();
    const double neg = contrastive_pair(Var<double>(x), Var<double>(y), PairLabel::negative, m).value().item();
    worst_pair = std::max({worst_pair, std::abs(pos - s), std::abs(neg - hinge * hinge)});
  }
  Outcome o;
  o.pass = worst_multi <= kMultiSiameseTol && worst_pair <= kContrastiveTol;
  o.detail = std::to_string(kLossInstances) + " instances (n 1..5, d 1..8): multi max |err| " +
             fmt("%.1e", worst_multi) + ", contrastive max |err| " + fmt("%.1e", worst_pair);
  return o;
}

// ---------------------------------------------------------------- C4

Tensor texture(double dx, double dy) {
  Tensor t({kLRHeight, kLRWidth, 3});
  for (std::size_t y = 0; y < kLRHeight; ++y)
    for (std::size_t x = 0; x < kLRWidth; ++x) {
      const double px = double(x) - dx, py = double(y) - dy;
      const double v = 0.5 + 0.2 * std::sin(2 * std::numbers::pi * px / 7.0) + 0.2 * std::cos(2 * std::numbers::pi * (py / 6.0 + px / 11.0));
      for (std::size_t c = 0; c < 3; ++c) t[(y * kLRWidth + x) * 3 + c] = float(v);
    }
  return t;
}

Outcome physics() {
  std::vector<std::string> bad;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_mean = 0.0;
  for (const auto& [h, w] : {std::pair<std::size_t, std::size_t>{96, 128}, {75, 100}, {12, 16}, {40, 55}}) {
    Tensor img({h, w, 3});
    for (auto& v : img.data()) v = float(u(rng));
    const Tensor lr = average_downsample(img);
    double hr_mean = 0, lr_mean = 0;
    for (float v : img.data()) hr_mean += v;
    for (float v : lr.data()) lr_mean += v;
    hr_mean /= double(img.size());
    lr_mean /= double(lr.size());
    worst_mean = std::max(worst_mean, std::abs(hr_mean - lr_mean));
  }
  if (worst_mean > kMeanTol) bad.push_back("downsample mean error " + fmt("%.2e", worst_mean));

  const FlowConfig cfg;
  const HornSchunckFlow hs(cfg.alpha, cfg.iterations, cfg.min_level_size);
  LRVideo still;
  const Tensor frame = texture(0, 0);
  still.frames = Tensor({4, kLRHeight, kLRWidth, 3});
  for (std::size_t t = 0; t < 4; ++t)
    std::copy(frame.data().begin(), frame.data().end(), still.frames.data().begin() + t * frame.size());
  const Tensor stacks = flow_stacks(still, hs, cfg);
  double max_abs = 0;
  for (float v : stacks.data()) max_abs = std::max(max_abs, double(std::abs(v)));
  if (max_abs != 0.0) bad.push_back("static stack max |flow| " + fmt("%.2e", max_abs));

  // Interior mean (2-pixel margin) of the recovered displacement.
  double worst_rel = 0;
  for (const auto& [dx, dy] : {std::pair<double, double>{1, 0}, {0, 1}}) {
    const FlowField f = lr_pair_flow(texture(0, 0), texture(dx, dy), hs, cfg);
    double mu = 0, mv = 0;
    std::size_t n = 0;
    for (std::size_t y = 2; y + 2 < kLRHeight; ++y)
      for (std::size_t x = 2; x + 2 < kLRWidth; ++x) {
        mu += f.u[y * kLRWidth + x];
        mv += f.v[y * kLRWidth + x];
        ++n;
      }
    mu /= double(n);
    mv /= double(n);
    worst_rel = std::max(worst_rel, std::hypot(mu - dx, mv - dy));
  }
  if (worst_rel >= kFlowRelError) bad.push_back("1-px translation error " + fmt("%.3f", worst_rel));

  Outcome o;
  o.pass = bad.empty();
  o.detail = o.pass ? "mean error " + fmt("%.1e", worst_mean) + ", static stack exactly zero, 1-px translation error " +
                          fmt("%.1f", 100 * worst_rel) + "%"
                    : bad.front();
  return o;
}

// ---------------------------------------------------------------- data stages

std::string section_key(const RunConfig& cfg, std::initializer_list<const char*> keys) {
  const json all = json::parse(dump_run_config(cfg));
  json part;
  for (const char* k : keys) part[k] = all.at(k);
  return hex(text_hash(part.dump()));
}

// Runs `make` unless `dir` carries a stamp equal to `key`.
void cached_stage(const fs::path& dir, const std::string& key, const std::string& name,
                  const std::function<void()>& make) {
  const fs::path stamp = dir / ".stamp";
  if (fs::exists(stamp) && slurp(stamp) == key) {
    log_line(name + ": cached (" + key + ")");
    return;
  }
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  make();
  write_text(stamp, key);
  log_line(name + ": done in " + fmt("%.0f", since(t0)) + " s");
}

fs::path prepare_data(const RunConfig& cfg, const fs::path& work) {
  const LogFn quiet;
  const fs::path hr = work / "hr", lr = work / "lr", flow = work / "flow";
  const std::string hr_key = section_key(cfg, {"toy"});
  const std::string lr_key = section_key(cfg, {"toy", "transforms", "degrade"});
  const std::string flow_key = section_key(cfg, {"toy", "transforms", "degrade", "flow"});
  cached_stage(hr, hr_key, "gen-toy", [&] { cmd_gen_toy(cfg, hr, true, quiet); });
  cached_stage(lr, lr_key, "prepare-lr", [&] { cmd_prepare_lr(cfg, hr / "manifest.jsonl", lr, 1, quiet); });
  cached_stage(flow, flow_key, "flow", [&] { cmd_flow(cfg.flow, lr / "manifest.jsonl", flow, 1, quiet); });
  return flow / "manifest.jsonl";
}

// ---------------------------------------------------------------- C5, C6

struct ExperimentSummary {
  json summary;
  double seconds_per_seed = 0.0;
  bool cached = false;
};

ExperimentSummary toy_experiment(const RunConfig& cfg, const fs::path& work, const std::string& self_hash) {
  const std::string key =
      hex(text_hash(self_hash + dump_run_config(cfg) + hex(file_hash(cfg.paths.lr_manifest))));
  const fs::path dir = work / "experiment" / key;
  ExperimentSummary out;
  if (fs::exists(dir / "summary.json") && fs::exists(dir / "timing.json")) {
    log_line("experiment: cached result " + dir.string());
    out.cached = true;
  } else {
    fs::remove_all(dir);
    const auto t0 = Clock::now();
    cmd_train(cfg, {TrainMode::baseline, TrainMode::augment, TrainMode::multi_siamese}, dir,
              [](const std::string& s) { log_line(s); });
    const double secs = since(t0);
    write_text(dir / "timing.json",
               json{{"seconds", secs}, {"seeds", cfg.train.seeds.size()}}.dump(2) + "\n");
  }
  out.summary = json::parse(slurp(dir / "summary.json"));
  const json timing = json::parse(slurp(dir / "timing.json"));
  out.seconds_per_seed = timing.at("seconds").get<double>() / timing.at("seeds").get<double>();
  return out;
}

const json& mode_entry(const json& summary, const std::string& mode) {
  for (const auto& m : summary.at("modes"))
    if (m.at("mode") == mode) return m;
  throw std::runtime_error("summary has no mode " + mode);
}

Outcome ordering(const ExperimentSummary& e) {
  const double base = mode_entry(e.summary, "baseline").at("mean").get<double>() * 100;
  const double aug = mode_entry(e.summary, "augment").at("mean").get<double>() * 100;
  const double multi = mode_entry(e.summary, "multi-siamese").at("mean").get<double>() * 100;
  const std::size_t seeds = mode_entry(e.summary, "multi-siamese").at("seeds").size();
  Outcome o;
  o.pass = seeds >= kExperimentSeeds && multi >= aug && aug >= base && multi - base >= kMinGainPoints &&
           e.seconds_per_seed < kSecondsPerSeed;
  o.detail = "mean acc baseline " + fmt("%.2f", base) + ", augment " + fmt("%.2f", aug) + ", multi-siamese " +
             fmt("%.2f", multi) + " over " + std::to_string(seeds) + " seeds (gain " + fmt("%+.2f", multi - base) +
             " pts), " + fmt("%.1f", e.seconds_per_seed / 60.0) + " min/seed" + (e.cached ? ", cached" : "");
  return o;
}

Outcome invariance(const ExperimentSummary& e) {
  const json& multi = mode_entry(e.summary, "multi-siamese").at("seeds");
  const json& aug = mode_entry(e.summary, "augment").at("seeds");
  std::size_t wins = 0;
  std::string per_seed;
  for (std::size_t i = 0; i < multi.size(); ++i) {
    const double before = multi[i].at("ratio_before").get<double>();
    const double after = multi[i].at("ratio_after").get<double>();
    double aug_after = NAN;
    for (const auto& a : aug)
      if (a.at("seed") == multi[i].at("seed")) aug_after = a.at("ratio_after").get<double>();
    const bool win = after < before && after < aug_after;
    wins += win ? 1 : 0;
    per_seed += (per_seed.empty() ? "" : "; ") + fmt("%.3f", before) + "->" + fmt("%.3f", after) + " vs aug " +
                fmt("%.3f", aug_after);
  }
  Outcome o;
  o.pass = multi.size() >= kExperimentSeeds && 2 * wins > multi.size();
  o.detail = std::to_string(wins) + "/" + std::to_string(multi.size()) + " seeds (" + per_seed + ")";
  return o;
}

// ---------------------------------------------------------------- C7

Outcome determinism(const RunConfig& base, const fs::path& work) {
  RunConfig cfg = base;
  cfg.model.conv1 = 4;
  cfg.model.conv2 = 8;
  cfg.model.conv3 = 8;
  cfg.model.feature_dim = 16;
  cfg.model.embed_dim = 64;
  cfg.train.seeds = {3};
  cfg.train.max_epochs = 1;
  cfg.train.stage1_epochs = 1;
  blas::set_single_threaded();

  const DatasetManifest manifest = read_manifest(cfg.paths.lr_manifest);
  const LRDataset data = load_lr_dataset(manifest, true);
  std::vector<std::vector<double>> losses;
  std::vector<std::string> checkpoints;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / "determinism" / ("run" + std::to_string(run));
    fs::remove_all(dir);
    ExperimentOptions opt;
    opt.out_dir = dir;
    opt.compute_ratio = false;
    const auto stats = run_experiment(cfg, manifest, data, {TrainMode::multi_siamese}, opt);
    losses.push_back(stats.at(0).seeds.at(0).train.first_step_losses);
    checkpoints.push_back(slurp(dir / "seed_3" / "multi-siamese" / "model.lrck"));
  }
  Outcome o;
  const bool same_losses = losses[0] == losses[1] && losses[0].size() == 10;
  const bool same_ck = !checkpoints[0].empty() && checkpoints[0] == checkpoints[1];
  o.pass = same_losses && same_ck;
  o.detail = std::to_string(losses[0].size()) + " step losses " + (same_losses ? "identical" : "DIFFER") +
             ", checkpoints (" + std::to_string(checkpoints[0].size()) + " bytes) " +
             (same_ck ? "identical" : "DIFFER");
  return o;
}

// ---------------------------------------------------------------- C8

template <typename F>
std::string error_kind(F&& f) {
  try {
    f();
  } catch (const IoError& e) {
    return to_string(e.code());
  } catch (const std::exception& e) {
    return std::string("untyped: ") + e.what();
  }
  return "no error";
}

Outcome formats(const fs::path& work) {
  const fs::path dir = work / "formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> bad;

  std::mt19937_64 rng(99);
  std::normal_distribution<float> g(0.0f, 3.0f);
  Tensor t({3, 5, 7});
  for (auto& v : t.data()) v = g(rng);
  t[0] = -0.0f;
  t[1] = 1e-40f;  // subnormal
  write_tensor(dir / "t.lrsv", t);
  const Tensor back = read_tensor(dir / "t.lrsv");
  if (back.shape() != t.shape() || std::memcmp(back.ptr(), t.ptr(), t.size() * sizeof(float)) != 0)
    bad.push_back("tensor round trip differs");

  Tensor a({4, 2}), b({6});
  for (auto& v : a.data()) v = g(rng);
  for (auto& v : b.data()) v = g(rng);
  save_checkpoint(dir / "c.lrck", 0xfeedull, {{"a", &a}, {"b", &b}});
  const CheckpointData ck = load_checkpoint(dir / "c.lrck", 0xfeedull);
  if (ck.fingerprint != 0xfeedull || ck.tensors.size() != 2 || ck.tensors[0].name != "a" ||
      std::memcmp(ck.tensors[0].value.ptr(), a.ptr(), a.size() * 4) != 0 ||
      std::memcmp(ck.tensors[1].value.ptr(), b.ptr(), b.size() * 4) != 0)
    bad.push_back("checkpoint round trip differs");
  save_checkpoint(dir / "c2.lrck", 0xfeedull, {{"a", &ck.tensors[0].value}, {"b", &ck.tensors[1].value}});
  if (slurp(dir / "c.lrck") != slurp(dir / "c2.lrck")) bad.push_back("checkpoint rewrite not byte-identical");

  // Every truncation and a set of single-field corruptions.
  const std::string tbytes = slurp(dir / "t.lrsv"), cbytes = slurp(dir / "c.lrck");
  std::size_t cases = 0;
  auto expect_kind = [&](const std::string& bytes, bool tensor, const std::string& want) {
    write_text(dir / "bad.bin", bytes);
    const std::string got = error_kind([&] {
      if (tensor)
        read_tensor(dir / "bad.bin");
      else
        load_checkpoint(dir / "bad.bin");
    });
    ++cases;
    if (want.empty() ? got.rfind("untyped", 0) == 0 || got == "no error" : got != want)
      bad.push_back("corruption case " + std::to_string(cases) + " gave " + got);
  };
  for (std::size_t len = 0; len < tbytes.size(); ++len) expect_kind(tbytes.substr(0, len), true, "");
  for (std::size_t len = 0; len < cbytes.size(); ++len) expect_kind(cbytes.substr(0, len), false, "");

  auto patched = [](std::string s, std::size_t off, const void* src, std::size_t n) {
    std::memcpy(s.data() + off, src, n);
    return s;
  };
  const std::uint32_t v9 = 9, rank9 = 9;
  const std::uint64_t huge = ~0ull, zero = 0;
  const float nan = NAN;
  expect_kind(patched(tbytes, 0, "XXXX", 4), true, to_string(IoErrc::bad_magic));
  expect_kind(patched(tbytes, 4, &v9, 4), true, to_string(IoErrc::unsupported_version));
  expect_kind(patched(tbytes, 8, &v9, 4), true, to_string(IoErrc::bad_dtype));
  expect_kind(patched(tbytes, 12, &rank9, 4), true, to_string(IoErrc::dim_overflow));
  expect_kind(patched(tbytes, 16, &huge, 8), true, to_string(IoErrc::dim_overflow));
  expect_kind(patched(tbytes, 16, &zero, 8), true, to_string(IoErrc::empty_dim));
  expect_kind(patched(tbytes, tbytes.size() - 4, &nan, 4), true, to_string(IoErrc::non_finite));
  expect_kind(tbytes + "extra", true, to_string(IoErrc::trailing_data));
  expect_kind(cbytes + "extra", false, to_string(IoErrc::trailing_data));
  expect_kind(patched(cbytes, 0, "XXXX", 4), false, to_string(IoErrc::bad_magic));
  expect_kind(patched(cbytes, 4, &v9, 4), false, to_string(IoErrc::unsupported_version));
  expect_kind("", true, to_string(IoErrc::truncated));
  if (error_kind([&] { read_tensor(dir / "absent.lrsv"); }) != to_string(IoErrc::open_failed)) bad.push_back("missing file not open_failed");

  Outcome o;
  o.pass = bad.empty();
  o.detail = o.pass ? "bit-exact round trips; " + std::to_string(cases + 1) + " corrupted files, all typed IoError"
                    : bad.front() + (bad.size() > 1 ? " (+" + std::to_string(bad.size() - 1) + " more)" : "");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string config_path, work_dir, only;
  app.add_option("--config", config_path, "Toy experiment config")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work_dir, "Cache and scratch directory")->required();
  app.add_option("--only", only, "Comma list of criteria to run, e.g. C1,C4");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  {
    std::stringstream ss(only);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) selected.insert(item);
  }
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.count(id) > 0; };

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  RunConfig cfg = load_run_config(config_path);
  blas::set_single_threaded();

  int failures = 0;
  auto report = [&](const std::string& id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    std::fprintf(stderr, "[%s] %s ...\n", id.c_str(), name.c_str());
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::printf("%s %-4s %-24s %s\n", o.pass ? "PASS" : "FAIL", id.c_str(), name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  report("C1", "structural", structural);
  report("C2", "gradcheck", gradients);
  report("C3", "loss-oracle", loss_oracle);
  report("C4", "physics", physics);
  report("C8", "formats", [&] { return formats(work); });

  const bool need_data = wanted("C5") || wanted("C6") || wanted("C7");
  if (need_data) {
    std::fprintf(stderr, "[data] toy dataset under %s\n", work.string().c_str());
    std::string data_error;
    try {
      cfg.paths.lr_manifest = prepare_data(cfg, work);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    auto fail_all = [&](const std::string& id, const std::string& name) {
      report(id, name, [&] { return Outcome{false, "data preparation failed: " + data_error}; });
    };
    if (!data_error.empty()) {
      fail_all("C5", "accuracy-ordering");
      fail_all("C6", "embedding-invariance");
      fail_all("C7", "determinism");
    } else {
      report("C7", "determinism", [&] { return determinism(cfg, work); });
      if (wanted("C5") || wanted("C6")) {
        std::string exp_error;
        ExperimentSummary exp;
        try {
          exp = toy_experiment(cfg, work, hex(file_hash("/proc/self/exe")));
        } catch (const std::exception& e) {
          exp_error = e.what();
        }
        auto guarded = [&](const std::function<Outcome()>& fn) {
          return [&, fn] { return exp_error.empty() ? fn() : Outcome{false, "experiment failed: " + exp_error}; };
        };
        report("C5", "accuracy-ordering", guarded([&] { return ordering(exp); }));
        report("C6", "embedding-invariance", guarded([&] { return invariance(exp); }));
      }
    }
  }

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", failures);
  return failures == 0 ? 0 : 1;
}
