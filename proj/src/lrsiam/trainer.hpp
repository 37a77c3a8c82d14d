#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrsiam/config.hpp"
#include "lrsiam/dataset.hpp"
#include "lrsiam/metrics.hpp"
#include "lrsiam/model.hpp"

namespace lrsiam {

using LogFn = std::function<void(const std::string&)>;

/// Raised when training produces a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// LR videos held in memory, grouped by source.
struct LRDataset {
  std::vector<std::string> class_names;
  std::vector<LRVideo> videos;
  std::map<std::string, std::vector<std::size_t>> by_source;  // ascending transform index

  std::size_t num_classes() const { return class_names.size(); }
  /// The identity-transform video of a source (transform index `identity`),
  /// falling back to the lowest transform index present.
  std::size_t representative(const std::string& source, std::size_t identity) const;
};

LRDataset load_lr_dataset(const DatasetManifest& manifest, bool with_flow);
LRDataset make_lr_dataset(std::vector<std::string> class_names, std::vector<LRVideo> videos);

/// Training sources with the LR videos each may contribute.
struct TrainingPool {
  std::vector<std::string> sources;
  std::vector<std::vector<std::size_t>> videos;  // indices into LRDataset::videos
};

/// Keeps up to pool_size LR videos per source: the identity transform plus a
/// deterministic draw of the rest (keyed by source id, not by run seed).
TrainingPool build_training_pool(const LRDataset& data, const std::vector<std::string>& sources,
                                 std::size_t pool_size, std::size_t identity,
                                 std::uint64_t pool_seed);

struct PlanItem {
  std::size_t source = 0;           // index into TrainingPool::sources
  std::vector<std::size_t> b1;      // n LR video indices of that source
  std::vector<std::size_t> b2;      // n LR video indices of other sources
};

struct BatchPlan {
  std::vector<PlanItem> items;
};

/// One plan over the given pool entries: b1 draws n distinct videos of each
/// item's source; b2 draws n videos uniformly from all other sources' videos.
BatchPlan build_batch_plan(const TrainingPool& pool, const std::vector<std::size_t>& items,
                           std::size_t n, Rng& rng);

/// Plans for one epoch: sources shuffled without replacement and chunked
/// into batches of batch_size.
std::vector<BatchPlan> plan_epoch(const TrainingPool& pool, std::size_t batch_size, std::size_t n,
                                  Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<double> first_step_losses;  // first 10 stage-2 step losses
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double last_val_accuracy = 0.0;
};

struct Stage1Result {
  std::vector<double> spatial_losses;
  std::vector<double> temporal_losses;
};

/// Per-frame pretraining of both streams (each with its own temporary head)
/// on frames of the pooled LR videos; frames inherit their video's label.
Stage1Result stage1_pretrain(Model& model, const LRDataset& data, const TrainingPool& pool,
                             const TrainConfig& cfg, std::uint64_t seed, const LogFn& log = {});

/// Single-stream variant, exposed for tests.
std::vector<double> stage1_stream(Model& model, StreamKind stream, const LRDataset& data,
                                  const TrainingPool& pool, const TrainConfig& cfg,
                                  std::uint64_t seed, std::size_t max_steps = 0);

struct Stage2Options {
  std::size_t identity = 0;
  std::uint64_t pool_seed = 0;  // draws the validation videos beyond the identity
  std::size_t max_steps = 0;  // 0: no limit (tests cap it)
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Joint training with early stopping on validation accuracy; the best
/// epoch's parameters are restored before returning.
TrainResult stage2_train(Model& model, const LRDataset& data, const TrainingPool& pool,
                         const std::vector<std::string>& val_sources, const TrainConfig& cfg,
                         const LossWeights& weights, std::uint64_t seed,
                         const Stage2Options& opt = {}, const LogFn& log = {});

/// The loss of one plan with the given mode; builds the graph on `model`.
/// Per item: lambda1 * L_multi over (b1, b2) plus lambda2 * the mean
/// cross-entropy of its 2n videos; items are averaged. Augment drops the
/// L_multi term; baseline classifies each item's identity video only.
Var<float> plan_loss(const Model& model, const LRDataset& data, const BatchPlan& plan,
                     TrainMode mode, const LossWeights& weights, std::size_t identity);

/// Predicted labels for the given LR videos (batched, no graph).
std::vector<std::size_t> predict(const Model& model, const LRDataset& data,
                                 const std::vector<std::size_t>& videos);

/// Embeddings [V, embed_dim] of the given LR videos.
Tensor embed_videos(const Model& model, const LRDataset& data, const std::vector<std::size_t>& videos);

/// Metrics on the identity LR video of each source.
Metrics evaluate(const Model& model, const LRDataset& data, const std::vector<std::string>& sources,
                 std::size_t identity);

/// Mean intra-source over mean inter-source Euclidean embedding distance.
struct DistanceRatio {
  double intra = 0.0;
  double inter = 0.0;
  double ratio = 0.0;
};
DistanceRatio distance_ratio(const Tensor& embeddings, const std::vector<std::string>& source_of);

struct SeedResult {
  std::uint64_t seed = 0;
  std::string split;
  double test_accuracy = 0.0;
  Metrics metrics;
  TrainResult train;
  DistanceRatio ratio_before;
  DistanceRatio ratio_after;
};

struct RunStats {
  TrainMode mode = TrainMode::baseline;
  std::vector<SeedResult> seeds;
  double mean = 0.0;
  double std = 0.0;
  bool std_defined = false;  // false with a single seed (std reported as 0)
};

RunStats summarize(TrainMode mode, std::vector<SeedResult> seeds);

struct ExperimentOptions {
  std::filesystem::path out_dir;     // per-seed artifacts when non-empty
  std::size_t ratio_videos_per_source = 8;
  bool compute_ratio = true;
  LogFn log;
};

/// Trains and evaluates every requested mode for every seed. Seed s uses the
/// manifest's split (s mod split count). Augment and multi-siamese share the
/// stage-1 weights and LR pool of a seed.
std::vector<RunStats> run_experiment(const RunConfig& cfg, const DatasetManifest& manifest,
                                     const LRDataset& data, const std::vector<TrainMode>& modes,
                                     const ExperimentOptions& opt);

/// Model checkpoint I/O.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path, const ModelConfig& cfg, const LogFn& warn = {});

}  // namespace lrsiam
