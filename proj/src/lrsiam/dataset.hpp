#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrsiam/rng.hpp"
#include "lrsiam/video.hpp"

namespace lrsiam {

/// One video file listed in a manifest. Paths are absolute in memory and
/// stored relative to the manifest's directory on disk.
struct VideoRecord {
  std::string id;
  std::filesystem::path path;
  std::size_t label = 0;
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  // LR videos only
  std::string source_id;
  std::optional<std::size_t> transform_index;
  std::optional<std::filesystem::path> flow_path;

  /// Source video id; an HR record is its own source.
  const std::string& source() const { return source_id.empty() ? id : source_id; }
};

/// Partition of source-video ids. `val` may be empty.
struct SplitDef {
  std::string name;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

enum class ManifestKind { hr, lr };

struct DatasetManifest {
  std::string name = "dataset";
  ManifestKind kind = ManifestKind::hr;
  std::vector<std::string> class_names;
  std::vector<VideoRecord> videos;
  std::vector<SplitDef> splits;

  std::size_t num_classes() const { return class_names.size(); }
  const VideoRecord& find(const std::string& id) const;
  /// Label of each distinct source id, in first-appearance order.
  std::vector<std::pair<std::string, std::size_t>> sources() const;
  const SplitDef& split(const std::string& name) const;
};

/// Manifest format problems (unreadable file, malformed records,
/// inconsistent references).
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-delimited JSON: a header record, one record per video, one per split.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Checks ids, labels and split references without touching video files.
void validate_manifest(const DatasetManifest& manifest);
/// Loads every listed tensor and checks it against the declared dims.
void verify_manifest_files(const DatasetManifest& manifest);

enum class SplitScheme { random_half, fixed_fraction };

struct SplitOptions {
  SplitScheme scheme = SplitScheme::random_half;
  std::size_t count = 10;         // random-half: number of partitions
  double val_fraction = 0.2;      // fixed-fraction
  double test_fraction = 0.2;     // fixed-fraction
};

/// Class-stratified splits over the manifest's source ids. random-half: each
/// class's sources are shuffled and the first floor(n/2) go to train.
/// fixed-fraction: one train/val/test partition.
std::vector<SplitDef> make_splits(const DatasetManifest& manifest, const SplitOptions& opt,
                                  std::uint64_t seed);

/// Moves round(fraction * n_c) of every class's ids (at least one when the
/// class has two or more) from `train` to a validation list.
void carve_validation(const DatasetManifest& manifest, SplitDef& split, double fraction,
                      std::uint64_t seed);

HRVideo load_hr_video(const VideoRecord& rec);
LRVideo load_lr_video(const VideoRecord& rec, bool with_flow);

std::string to_string(ManifestKind k);

}  // namespace lrsiam
