#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrsiam/flow.hpp"
#include "lrsiam/loss.hpp"
#include "lrsiam/model.hpp"
#include "lrsiam/toy.hpp"
#include "lrsiam/transform.hpp"

namespace lrsiam {

enum class TrainMode { baseline, augment, multi_siamese };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TransformGridConfig {
  std::vector<double> tx_pct{-5.0, -2.5, 0.0, 2.5, 5.0};
  std::vector<double> ty_pct{-5.0, 0.0, 5.0};
  std::vector<double> rot_deg{-10.0, -5.0, 0.0, 5.0, 10.0};
  // LR transforms generated per HR video by prepare-lr: the identity plus
  // per_video - 1 others drawn from the grid. 0 applies the whole grid.
  std::size_t per_video = 0;
  std::uint64_t seed = 0;

  TransformSet build() const;
};

struct TrainConfig {
  TrainMode mode = TrainMode::multi_siamese;
  double stage1_lr = 0.01;
  double stage2_lr = 0.003;
  double momentum = 0.9;
  std::size_t batch_size = 4;       // HR items per stage-2 step
  std::size_t n = 8;                // branches per side
  std::size_t pool_size = 8;        // LR transforms kept per HR training video
  std::size_t max_epochs = 20;
  std::size_t patience = 4;
  std::size_t stage1_epochs = 3;
  std::size_t stage1_batch = 64;    // frames per stage-1 step
  bool skip_stage1 = false;
  double val_fraction = 0.2;
  std::size_t val_per_source = 1;   // LR videos scored per validation source
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double grad_clip = 0.0;           // global-norm clip; 0 disables

  void validate() const;
};

struct PathConfig {
  // LR manifest with flow stacks consumed by train; relative paths resolve
  // against the config file's directory.
  std::filesystem::path lr_manifest = "data/flow/manifest.jsonl";
};

/// Every tunable of the pipeline. Unknown JSON keys are rejected.
struct RunConfig {
  ToyConfig toy;
  TransformGridConfig transforms;
  DegradeConfig degrade;
  FlowConfig flow;
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  PathConfig paths;

  void validate() const;
};

/// Parses JSON text; missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved configuration as pretty-printed JSON.
std::string dump_run_config(const RunConfig& cfg);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lrsiam
