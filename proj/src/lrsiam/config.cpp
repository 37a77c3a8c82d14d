#include "lrsiam/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace lrsiam {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::augment: return "augment";
    case TrainMode::multi_siamese: return "multi-siamese";
  }
  return "unknown";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "baseline") return TrainMode::baseline;
  if (s == "augment") return TrainMode::augment;
  if (s == "multi-siamese") return TrainMode::multi_siamese;
  throw ConfigError("unknown mode '" + s + "' (expected baseline, augment or multi-siamese)");
}

TransformSet TransformGridConfig::build() const { return build_transform_grid(tx_pct, ty_pct, rot_deg); }

void TrainConfig::validate() const {
  if (!(stage1_lr > 0.0) || !(stage2_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (stage1_batch == 0) throw ConfigError("train: stage1_batch must be >= 1");
  if (mode == TrainMode::multi_siamese && n < 2) throw ConfigError("train: n must be >= 2 for multi-siamese mode");
  if (n == 0) throw ConfigError("train: n must be >= 1");
  if (pool_size < n) throw ConfigError("train: pool_size must be >= n");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must be in [0, 1)");
  if (val_per_source == 0) throw ConfigError("train: val_per_source must be >= 1");
  if (seeds.empty()) throw ConfigError("train: at least one seed is required");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
}

void RunConfig::validate() const {
  try {
    toy.validate();
    model.validate();
    loss.validate();
    (void)transforms.build();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (degrade.blur_sigma < 0.0 || degrade.noise_sigma < 0.0) throw ConfigError("degrade: sigmas must be >= 0");
  if (!(flow.alpha > 0.0) || flow.iterations == 0) throw ConfigError("flow: alpha and iterations must be positive");
  if (flow.upscale_width < kLRWidth || flow.upscale_height < kLRHeight) {
    throw ConfigError("flow: upscale size must be at least 16x12");
  }
  if (model.num_classes != toy.num_classes) {
    throw ConfigError("model.num_classes (" + std::to_string(model.num_classes) +
                      ") must equal toy.num_classes (" + std::to_string(toy.num_classes) + ")");
  }
  train.validate();
  const std::size_t grid = transforms.build().size();
  if (transforms.per_video > grid) throw ConfigError("transforms.per_video exceeds the grid size");
  const std::size_t available = transforms.per_video == 0 ? grid : transforms.per_video;
  if (train.pool_size > available) {
    throw ConfigError("train.pool_size exceeds the LR transforms available per video");
  }
  if (train.val_per_source > available) {
    throw ConfigError("train.val_per_source exceeds the LR transforms available per video");
  }
}

namespace {

// Binds JSON keys of one section to struct fields in both directions.
class Section {
 public:
  explicit Section(std::string name) : name_(std::move(name)) {}

  template <typename V>
  Section& bind(const std::string& key, V& field) {
    readers_[key] = [this, key, &field](const json& j) {
      try {
        field = j.get<V>();
      } catch (const json::exception&) {
        throw ConfigError(name_ + "." + key + ": wrong value type");
      }
    };
    writers_.emplace_back(key, [&field]() { return ordered_json(field); });
    return *this;
  }

  Section& bind_custom(const std::string& key, std::function<void(const json&)> rd,
                       std::function<ordered_json()> wr) {
    readers_[key] = std::move(rd);
    writers_.emplace_back(key, std::move(wr));
    return *this;
  }

  void read(const json& j) const {
    if (!j.is_object()) throw ConfigError("section '" + name_ + "' must be an object");
    for (const auto& [k, v] : j.items()) {
      auto it = readers_.find(k);
      if (it == readers_.end()) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
      it->second(v);
    }
  }

  ordered_json write() const {
    ordered_json o = ordered_json::object();
    for (const auto& [k, w] : writers_) o[k] = w();
    return o;
  }

  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::map<std::string, std::function<void(const json&)>> readers_;
  std::vector<std::pair<std::string, std::function<ordered_json()>>> writers_;
};

std::vector<Section> sections(RunConfig& c) {
  std::vector<Section> s;
  s.emplace_back("toy");
  s.back()
      .bind("num_classes", c.toy.num_classes)
      .bind("videos_per_class", c.toy.videos_per_class)
      .bind("frames", c.toy.frames)
      .bind("width", c.toy.width)
      .bind("height", c.toy.height)
      .bind("sprite_min", c.toy.sprite_min)
      .bind("sprite_max", c.toy.sprite_max)
      .bind("speed_min", c.toy.speed_min)
      .bind("speed_max", c.toy.speed_max)
      .bind("seed", c.toy.seed)
      .bind("split_count", c.toy.split_count);
  s.emplace_back("transforms");
  s.back()
      .bind("tx_pct", c.transforms.tx_pct)
      .bind("ty_pct", c.transforms.ty_pct)
      .bind("rot_deg", c.transforms.rot_deg)
      .bind("per_video", c.transforms.per_video)
      .bind("seed", c.transforms.seed);
  s.emplace_back("degrade");
  s.back()
      .bind("blur_sigma", c.degrade.blur_sigma)
      .bind("noise_sigma", c.degrade.noise_sigma)
      .bind("seed", c.degrade.seed);
  s.emplace_back("flow");
  s.back()
      .bind("alpha", c.flow.alpha)
      .bind("iterations", c.flow.iterations)
      .bind("upscale_width", c.flow.upscale_width)
      .bind("upscale_height", c.flow.upscale_height)
      .bind("min_level_size", c.flow.min_level_size);
  s.emplace_back("model");
  s.back()
      .bind("num_classes", c.model.num_classes)
      .bind("conv1", c.model.conv1)
      .bind("conv2", c.model.conv2)
      .bind("conv3", c.model.conv3)
      .bind("feature_dim", c.model.feature_dim)
      .bind("embed_dim", c.model.embed_dim)
      .bind("pyramid_level", c.model.pyramid_level)
      .bind("two_stream", c.model.two_stream);
  s.emplace_back("loss");
  s.back()
      .bind("lambda1", c.loss.lambda1)
      .bind("lambda2", c.loss.lambda2)
      .bind("margin", c.loss.margin);
  s.emplace_back("train");
  TrainConfig& t = c.train;
  s.back()
      .bind_custom(
          "mode", [&t](const json& j) {
            if (!j.is_string()) throw ConfigError("train.mode must be a string");
            t.mode = parse_train_mode(j.get<std::string>());
          },
          [&t]() { return ordered_json(to_string(t.mode)); })
      .bind("stage1_lr", t.stage1_lr)
      .bind("stage2_lr", t.stage2_lr)
      .bind("momentum", t.momentum)
      .bind("batch_size", t.batch_size)
      .bind("n", t.n)
      .bind("pool_size", t.pool_size)
      .bind("max_epochs", t.max_epochs)
      .bind("patience", t.patience)
      .bind("stage1_epochs", t.stage1_epochs)
      .bind("stage1_batch", t.stage1_batch)
      .bind("skip_stage1", t.skip_stage1)
      .bind("val_fraction", t.val_fraction)
      .bind("val_per_source", t.val_per_source)
      .bind("seeds", t.seeds)
      .bind("grad_clip", t.grad_clip);
  s.emplace_back("paths");
  PathConfig& p = c.paths;
  s.back().bind_custom(
      "lr_manifest", [&p](const json& j) {
        if (!j.is_string()) throw ConfigError("paths.lr_manifest must be a string");
        p.lr_manifest = j.get<std::string>();
      },
      [&p]() { return ordered_json(p.lr_manifest.generic_string()); });
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  auto secs = sections(cfg);
  for (const auto& [k, v] : j.items()) {
    auto it = std::find_if(secs.begin(), secs.end(), [&](const Section& s) { return s.name() == k; });
    if (it == secs.end()) throw ConfigError("unknown config section '" + k + "'");
    it->read(v);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    RunConfig cfg = parse_run_config(ss.str());
    if (cfg.paths.lr_manifest.is_relative()) {
      cfg.paths.lr_manifest = std::filesystem::absolute(path).parent_path() / cfg.paths.lr_manifest;
    }
    return cfg;
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  ordered_json o = ordered_json::object();
  for (const auto& s : sections(copy)) o[s.name()] = s.write();
  return o.dump(2) + "\n";
}

}  // namespace lrsiam
