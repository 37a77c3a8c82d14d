#pragma once

// Stage-wise commands over on-disk artifacts. Every command reads its inputs,
// writes its outputs under `out`, and reports progress through `log`.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrsiam/config.hpp"
#include "lrsiam/dataset.hpp"
#include "lrsiam/gradcheck_suite.hpp"
#include "lrsiam/trainer.hpp"

namespace lrsiam {

/// Refused because an output already exists (pass force to overwrite).
class PathCollision : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An upstream stage has not been run.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes HR videos, manifest.jsonl and the resolved config.json under out.
DatasetManifest cmd_gen_toy(const RunConfig& cfg, const std::filesystem::path& out, bool force,
                            const LogFn& log = {});

/// Degrades every HR video with the configured transforms; writes
/// out/lr/<id>.lrsv and an LR manifest carrying (source_id, k) provenance and
/// the HR manifest's splits.
DatasetManifest cmd_prepare_lr(const RunConfig& cfg, const std::filesystem::path& hr_manifest,
                               const std::filesystem::path& out, std::size_t jobs,
                               const LogFn& log = {});

/// Computes flow stacks for every LR video (cached by content of the flow
/// settings) and writes out/manifest.jsonl pointing at frames and flow.
DatasetManifest cmd_flow(const FlowConfig& cfg, const std::filesystem::path& lr_manifest,
                         const std::filesystem::path& out, std::size_t jobs, const LogFn& log = {});

/// Runs the experiment for the given modes; writes config.json,
/// seed_<s>/<mode>/{history.jsonl, metrics.json, model.lrck} and summary.json.
/// Returns the summary JSON text.
std::string cmd_train(const RunConfig& cfg, const std::vector<TrainMode>& modes,
                      const std::filesystem::path& out, const LogFn& log = {});

/// Metrics JSON for a checkpoint on the test part of a manifest split. The
/// run's config.json is located in the checkpoint's directory or a parent.
std::string cmd_eval(const std::filesystem::path& checkpoint, const std::string& split,
                     const LogFn& log = {});

/// Embeddings of every LR video in the manifest (restricted to a split's test
/// sources when given) plus the intra/inter-source distance ratio report.
/// Writes out/embeddings.lrsv, out/embeddings.jsonl, out/ratio.json and
/// returns the ratio JSON.
std::string cmd_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                      const std::filesystem::path& out, const std::optional<std::string>& split,
                      const LogFn& log = {});

/// Runs the gradcheck suite; returns its JSON report and sets all_passed.
std::string cmd_gradcheck(const GradcheckSuiteOptions& opt, bool& all_passed, const LogFn& log = {});

/// Locates config.json next to or above a file.
std::filesystem::path find_run_config(const std::filesystem::path& start);

}  // namespace lrsiam
