#include "lrsiam/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lrsiam/blas.hpp"
#include "lrsiam/flow.hpp"
#include "lrsiam/tensor_io.hpp"
#include "lrsiam/transform.hpp"

namespace lrsiam {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard lock(mu);
          if (error) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string hex64(std::uint64_t v, int digits = 16) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf + (16 - digits));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> transforms_for(const std::string& video_id, const TransformSet& grid,
                                        std::size_t per_video, std::uint64_t seed) {
  std::vector<std::size_t> all(grid.size());
  std::iota(all.begin(), all.end(), 0);
  if (per_video == 0 || per_video >= grid.size()) return all;
  const std::size_t id = grid.identity_index();
  std::vector<std::size_t> rest;
  for (std::size_t k : all) {
    if (k != id) rest.push_back(k);
  }
  Rng rng(substream_seed(seed, "per-video:" + video_id));
  std::shuffle(rest.begin(), rest.end(), rng);
  std::vector<std::size_t> chosen{id};
  chosen.insert(chosen.end(), rest.begin(), rest.begin() + long(per_video - 1));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::uint64_t flow_settings_hash(const FlowProvider& p, const FlowConfig& c) {
  std::ostringstream os;
  os << p.tag() << ' ' << c.alpha << ' ' << c.iterations << ' ' << c.upscale_width << ' '
     << c.upscale_height << ' ' << c.min_level_size;
  return fnv1a64(os.str());
}

ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["samples"] = m.samples;
  j["accuracy"] = m.accuracy;
  ordered_json pc = ordered_json::array();
  for (double a : m.per_class_accuracy) pc.push_back(std::isnan(a) ? ordered_json(nullptr) : ordered_json(a));
  j["per_class_accuracy"] = pc;
  j["confusion"] = m.confusion;
  if (m.binary) {
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
  }
  return j;
}

std::string comparison_table(const std::vector<RunStats>& stats) {
  std::ostringstream os;
  os << "mode            seeds  mean acc   std\n";
  for (const auto& s : stats) {
    char line[128];
    std::snprintf(line, sizeof line, "%-15s %5zu  %7.2f%%  %5.2f%s\n", to_string(s.mode).c_str(),
                  s.seeds.size(), 100.0 * s.mean, 100.0 * s.std, s.std_defined ? "" : " (single seed)");
    os << line;
  }
  return os.str();
}

}  // namespace

fs::path find_run_config(const fs::path& start) {
  fs::path dir = fs::absolute(start);
  if (!fs::is_directory(dir)) dir = dir.parent_path();
  for (; !dir.empty(); dir = dir.parent_path()) {
    if (fs::exists(dir / "config.json")) return dir / "config.json";
    if (dir == dir.root_path()) break;
  }
  throw MissingArtifact("no config.json found next to or above " + start.string() +
                        "; checkpoints must come from a `train` output directory");
}

DatasetManifest cmd_gen_toy(const RunConfig& cfg, const fs::path& out, bool force, const LogFn& log) {
  cfg.validate();
  const fs::path manifest = out / "manifest.jsonl";
  if (!force && (fs::exists(manifest) || fs::exists(out / "hr"))) {
    throw PathCollision("output " + out.string() + " already holds a dataset; pass --force to overwrite");
  }
  if (force && fs::exists(out / "hr")) fs::remove_all(out / "hr");
  emit(log, "rendering " + std::to_string(cfg.toy.num_classes * cfg.toy.videos_per_class) +
                " toy videos (" + std::to_string(cfg.toy.width) + "x" + std::to_string(cfg.toy.height) +
                ", T=" + std::to_string(cfg.toy.frames) + ")");
  DatasetManifest m = gen_toy_dataset(cfg.toy, out);
  write_text(out / "config.json", dump_run_config(cfg));
  emit(log, "wrote " + manifest.string());
  return m;
}

DatasetManifest cmd_prepare_lr(const RunConfig& cfg, const fs::path& hr_manifest, const fs::path& out,
                               std::size_t jobs, const LogFn& log) {
  cfg.validate();
  if (!fs::exists(hr_manifest)) {
    throw MissingArtifact("HR manifest " + hr_manifest.string() + " not found; run `gen-toy` first");
  }
  const DatasetManifest hr = read_manifest(hr_manifest);
  if (hr.kind != ManifestKind::hr) throw ManifestError(hr_manifest.string() + " is not an HR manifest");
  const TransformSet grid = cfg.transforms.build();
  fs::create_directories(out / "lr");

  std::vector<std::vector<std::size_t>> per_video(hr.videos.size());
  for (std::size_t i = 0; i < hr.videos.size(); ++i) {
    per_video[i] = transforms_for(hr.videos[i].id, grid, cfg.transforms.per_video, cfg.transforms.seed);
  }
  emit(log, "degrading " + std::to_string(hr.videos.size()) + " HR videos with " +
                std::to_string(per_video.empty() ? 0 : per_video.front().size()) + " of " +
                std::to_string(grid.size()) + " transforms each");
  std::vector<std::vector<VideoRecord>> records(hr.videos.size());
  std::atomic<std::size_t> done{0};
  std::mutex log_mu;
  parallel_for(hr.videos.size(), jobs, [&](std::size_t i) {
    const HRVideo video = load_hr_video(hr.videos[i]);
    for (std::size_t k : per_video[i]) {
      LRVideo lr = degrade(video, grid[k], k, cfg.degrade);
      VideoRecord rec;
      rec.id = lr.id;
      rec.path = fs::absolute(out / "lr" / (lr.id + ".lrsv"));
      rec.label = lr.label;
      rec.frames = lr.num_frames();
      rec.height = kLRHeight;
      rec.width = kLRWidth;
      rec.source_id = lr.source_id;
      rec.transform_index = k;
      write_tensor(rec.path, lr.frames);
      records[i].push_back(std::move(rec));
    }
    const std::size_t d = ++done;
    if (d % 20 == 0 || d == hr.videos.size()) {
      std::lock_guard lock(log_mu);
      emit(log, "prepare-lr: " + std::to_string(d) + "/" + std::to_string(hr.videos.size()));
    }
  });
  DatasetManifest lr;
  lr.name = hr.name;
  lr.kind = ManifestKind::lr;
  lr.class_names = hr.class_names;
  lr.splits = hr.splits;
  for (auto& rs : records) {
    for (auto& r : rs) lr.videos.push_back(std::move(r));
  }
  write_manifest(out / "manifest.jsonl", lr);
  write_text(out / "config.json", dump_run_config(cfg));
  emit(log, "wrote " + std::to_string(lr.videos.size()) + " LR videos to " + (out / "manifest.jsonl").string());
  return lr;
}

DatasetManifest cmd_flow(const FlowConfig& cfg, const fs::path& lr_manifest, const fs::path& out,
                         std::size_t jobs, const LogFn& log) {
  if (!fs::exists(lr_manifest)) {
    throw MissingArtifact("LR manifest " + lr_manifest.string() + " not found; run `prepare-lr` first");
  }
  DatasetManifest m = read_manifest(lr_manifest);
  if (m.kind != ManifestKind::lr) {
    throw ManifestError(lr_manifest.string() + " is not an LR manifest; run `prepare-lr` first");
  }
  const HornSchunckFlow provider(cfg.alpha, cfg.iterations, cfg.min_level_size);
  const std::string suffix = "." + provider.tag() + "-" + hex64(flow_settings_hash(provider, cfg), 8) + ".lrsv";
  fs::create_directories(out / "flow");
  std::atomic<std::size_t> done{0};
  std::atomic<std::size_t> cached{0};
  std::mutex log_mu;
  emit(log, "flow: " + std::to_string(m.videos.size()) + " videos, provider " + provider.tag());
  parallel_for(m.videos.size(), jobs, [&](std::size_t i) {
    VideoRecord& rec = m.videos[i];
    const fs::path target = fs::absolute(out / "flow" / (rec.id + suffix));
    bool reuse = false;
    if (fs::exists(target)) {
      try {
        reuse = read_tensor(target).shape() == Shape{rec.frames, kLRHeight, kLRWidth, kFlowChannels};
      } catch (const IoError&) {
        reuse = false;
      }
    }
    if (reuse) {
      ++cached;
    } else {
      const LRVideo video = load_lr_video(rec, false);
      write_tensor(target, flow_stacks(video, provider, cfg));
    }
    rec.flow_path = target;
    const std::size_t d = ++done;
    if (d % 50 == 0 || d == m.videos.size()) {
      std::lock_guard lock(log_mu);
      emit(log, "flow: " + std::to_string(d) + "/" + std::to_string(m.videos.size()) + " (" +
                    std::to_string(cached.load()) + " cached)");
    }
  });
  write_manifest(out / "manifest.jsonl", m);
  emit(log, "wrote " + (out / "manifest.jsonl").string());
  return m;
}

std::string cmd_train(const RunConfig& cfg, const std::vector<TrainMode>& modes, const fs::path& out,
                      const LogFn& log) {
  cfg.validate();
  if (modes.empty()) throw ConfigError("train: no modes requested");
  const fs::path manifest_path = cfg.paths.lr_manifest;
  if (!fs::exists(manifest_path)) {
    throw MissingArtifact("LR manifest " + manifest_path.string() +
                          " not found; run `prepare-lr` and `flow` first (config paths.lr_manifest)");
  }
  const DatasetManifest manifest = read_manifest(manifest_path);
  if (manifest.kind != ManifestKind::lr) throw ManifestError(manifest_path.string() + " is not an LR manifest");
  for (const auto& v : manifest.videos) {
    if (!v.flow_path) {
      throw MissingArtifact("LR video '" + v.id + "' has no flow stacks; run `flow` first");
    }
  }
  blas::set_single_threaded();
  fs::create_directories(out);
  RunConfig echoed = cfg;
  echoed.paths.lr_manifest = fs::absolute(manifest_path);
  write_text(out / "config.json", dump_run_config(echoed));
  emit(log, "LR manifest " + manifest_path.string() + " content hash " + hex64(file_hash(manifest_path)));
  const LRDataset data = load_lr_dataset(manifest, true);
  emit(log, "loaded " + std::to_string(data.videos.size()) + " LR videos from " +
                std::to_string(data.by_source.size()) + " sources");
  ExperimentOptions opt;
  opt.out_dir = out;
  opt.log = log;
  const auto stats = run_experiment(echoed, manifest, data, modes, opt);

  ordered_json summary;
  summary["lr_manifest_hash"] = hex64(file_hash(manifest_path));
  ordered_json arr = ordered_json::array();
  for (const auto& s : stats) {
    ordered_json j;
    j["mode"] = to_string(s.mode);
    ordered_json seeds = ordered_json::array();
    for (const auto& r : s.seeds) {
      seeds.push_back({{"seed", r.seed},
                       {"split", r.split},
                       {"test_accuracy", r.test_accuracy},
                       {"best_epoch", r.train.best_epoch},
                       {"epochs_run", r.train.history.size()},
                       {"ratio_before", r.ratio_before.ratio},
                       {"ratio_after", r.ratio_after.ratio}});
    }
    j["seeds"] = seeds;
    j["mean"] = s.mean;
    j["std"] = s.std;
    j["std_defined"] = s.std_defined;
    arr.push_back(j);
  }
  summary["modes"] = arr;
  const std::string table = comparison_table(stats);
  summary["table"] = table;
  const std::string text = summary.dump(2) + "\n";
  write_text(out / "summary.json", text);
  emit(log, "\n" + table);
  return text;
}

std::string cmd_eval(const fs::path& checkpoint, const std::string& split, const LogFn& log) {
  if (!fs::exists(checkpoint)) throw MissingArtifact("checkpoint " + checkpoint.string() + " not found; run `train` first");
  const fs::path cfg_path = find_run_config(checkpoint);
  const RunConfig cfg = load_run_config(cfg_path);
  if (!fs::exists(cfg.paths.lr_manifest)) {
    throw MissingArtifact("LR manifest " + cfg.paths.lr_manifest.string() + " named by " +
                          cfg_path.string() + " not found");
  }
  const DatasetManifest manifest = read_manifest(cfg.paths.lr_manifest);
  const SplitDef& def = manifest.split(split);
  if (def.test.empty()) throw ManifestError("split '" + split + "' has no test videos");
  blas::set_single_threaded();
  const Model model = load_model(checkpoint, cfg.model, log);
  // Only the identity video of each test source is needed.
  const std::size_t identity = cfg.transforms.build().identity_index();
  std::set<std::string> wanted(def.test.begin(), def.test.end());
  std::vector<LRVideo> videos;
  for (const auto& rec : manifest.videos) {
    if (wanted.count(rec.source()) && rec.transform_index == identity) videos.push_back(load_lr_video(rec, true));
  }
  const LRDataset data = make_lr_dataset(manifest.class_names, std::move(videos));
  const Metrics m = evaluate(model, data, def.test, identity);
  ordered_json j;
  j["checkpoint"] = fs::absolute(checkpoint).string();
  j["split"] = split;
  j["metrics"] = metrics_json(m);
  emit(log, "accuracy " + std::to_string(m.accuracy) + " on " + std::to_string(m.samples) + " test videos");
  return j.dump(2) + "\n";
}

std::string cmd_embed(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out,
                      const std::optional<std::string>& split, const LogFn& log) {
  if (!fs::exists(checkpoint)) throw MissingArtifact("checkpoint " + checkpoint.string() + " not found; run `train` first");
  if (!fs::exists(manifest_path)) throw MissingArtifact("manifest " + manifest_path.string() + " not found");
  const RunConfig cfg = load_run_config(find_run_config(checkpoint));
  const DatasetManifest manifest = read_manifest(manifest_path);
  if (manifest.kind != ManifestKind::lr) throw ManifestError(manifest_path.string() + " is not an LR manifest");
  std::optional<std::set<std::string>> keep;
  if (split) {
    const SplitDef& def = manifest.split(*split);
    keep = std::set<std::string>(def.test.begin(), def.test.end());
  }
  std::vector<LRVideo> videos;
  for (const auto& rec : manifest.videos) {
    if (keep && !keep->count(rec.source())) continue;
    if (!rec.flow_path) throw MissingArtifact("LR video '" + rec.id + "' has no flow stacks; run `flow` first");
    videos.push_back(load_lr_video(rec, true));
  }
  if (videos.empty()) throw ManifestError("no LR videos selected for embedding");
  blas::set_single_threaded();
  const Model model = load_model(checkpoint, cfg.model, log);
  const LRDataset data = make_lr_dataset(manifest.class_names, std::move(videos));
  std::vector<std::size_t> all(data.videos.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor emb = embed_videos(model, data, all);
  fs::create_directories(out);
  write_tensor(out / "embeddings.lrsv", emb);
  {
    std::ofstream ids(out / "embeddings.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < data.videos.size(); ++i) {
      const auto& v = data.videos[i];
      ids << ordered_json{{"row", i}, {"id", v.id}, {"source_id", v.source_id},
                          {"transform_index", v.transform_index}, {"label", v.label}}
                 .dump()
          << '\n';
    }
  }
  std::vector<std::string> sources;
  for (const auto& v : data.videos) sources.push_back(v.source_id);
  const DistanceRatio r = distance_ratio(emb, sources);
  ordered_json j{{"videos", data.videos.size()}, {"sources", data.by_source.size()},
                 {"intra", r.intra}, {"inter", r.inter}, {"ratio", r.ratio}};
  const std::string text = j.dump(2) + "\n";
  write_text(out / "ratio.json", text);
  emit(log, "intra/inter distance ratio " + std::to_string(r.ratio) + " over " +
                std::to_string(data.videos.size()) + " videos");
  return text;
}

std::string cmd_gradcheck(const GradcheckSuiteOptions& opt, bool& all_passed, const LogFn& log) {
  all_passed = true;
  ordered_json cases = ordered_json::array();
  const auto results = run_gradcheck_suite(opt, [&](const GradcheckCaseResult& r) {
    char line[200];
    std::snprintf(line, sizeof line, "%-32s %s  max rel err %.3g  (%zu coords, %zu skipped, %.2fs)",
                  r.name.c_str(), r.passed ? "ok  " : "FAIL", r.max_rel_error, r.coords, r.skipped, r.seconds);
    emit(log, line);
  });
  for (const auto& r : results) {
    all_passed = all_passed && r.passed;
    cases.push_back({{"name", r.name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error},
                     {"seeds", r.seeds}, {"coords", r.coords}, {"skipped", r.skipped},
                     {"seconds", r.seconds}});
  }
  ordered_json j{{"passed", all_passed}, {"tolerance", opt.tolerance}, {"epsilon", opt.epsilon},
                 {"cases", cases}};
  return j.dump(2) + "\n";
}

}  // namespace lrsiam
