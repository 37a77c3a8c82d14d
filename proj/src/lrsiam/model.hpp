#pragma once

// Recognition network. Per frame, a spatial stream (RGB, 12x16x3) and a
// temporal stream (flow stack, 12x16x20) each produce a feature vector; the
// per-frame features are max-pooled over a temporal pyramid, passed through
// two fully connected layers to form the embedding, and a final fully
// connected layer produces class logits.
//
// Each stream: conv3x3(c1) relu conv3x3(c2) relu maxpool2x2 conv3x3(c3) relu
// flatten fc(feature_dim) relu. All convolutions use stride 1 and padding 1.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrsiam/autodiff.hpp"
#include "lrsiam/params.hpp"
#include "lrsiam/video.hpp"

namespace lrsiam {

enum class StreamKind { spatial, temporal };

struct ModelConfig {
  std::size_t num_classes = 10;
  std::size_t conv1 = 32;
  std::size_t conv2 = 64;
  std::size_t conv3 = 64;
  std::size_t feature_dim = 256;  // per stream
  std::size_t embed_dim = 8192;
  std::size_t pyramid_level = 4;
  bool two_stream = true;

  std::size_t frame_feature_dim() const { return feature_dim * (two_stream ? 2 : 1); }
  std::size_t pyramid_intervals() const { return (std::size_t{1} << pyramid_level) - 1; }
  std::size_t pooled_dim() const { return pyramid_intervals() * frame_feature_dim(); }
  /// Smallest frame count for which every pyramid interval is non-empty.
  std::size_t min_frames() const { return std::size_t{1} << (pyramid_level - 1); }
  /// Hash of every architecture field; stored in checkpoints.
  std::uint64_t fingerprint() const;
  void validate() const;
};

/// Temporal pyramid max pooling of per-frame features [T, D]: level l splits
/// [0, T) into 2^(l-1) intervals at floor(T j / 2^(l-1)); the interval maxima
/// are concatenated level-major, intervals ascending. Result is
/// [(2^L - 1) * D].
template <typename T>
Var<T> pyramid_pool(const Var<T>& features, std::size_t level);

/// Interval boundaries used by pyramid_pool, in output order.
std::vector<std::pair<std::size_t, std::size_t>> pyramid_intervals(std::size_t frames,
                                                                   std::size_t level);

/// Batched model inputs: frames of V videos packed along axis 0.
struct VideoBatch {
  Tensor rgb;   // [sum T, 12, 16, 3]
  Tensor flow;  // [sum T, 12, 16, 20]
  std::vector<std::size_t> frame_counts;
  std::vector<std::size_t> labels;
};

/// Packs videos (which must carry flow stacks) into one batch.
VideoBatch pack_videos(std::span<const LRVideo* const> videos);

/// Names and shapes of every model parameter, in checkpoint order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg);

template <typename T>
class ModelT {
 public:
  /// Kaiming-uniform (fan-in) weights, zero biases, seeded per parameter name.
  ModelT(const ModelConfig& cfg, std::uint64_t seed);
  ModelT(const ModelConfig& cfg, ParamSet<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// frames [N, 12, 16, C] -> [N, feature_dim]
  Var<T> stream_features(StreamKind stream, const Var<T>& frames) const;
  /// [N, frame_feature_dim]; flow is ignored in one-stream mode.
  Var<T> frame_features(const Var<T>& rgb, const Var<T>& flow) const;
  /// Pre-embedding representation [V, pooled_dim].
  Var<T> pooled(const Var<T>& rgb, const Var<T>& flow,
                std::span<const std::size_t> frame_counts) const;
  /// Embedding [V, embed_dim].
  Var<T> embed(const Var<T>& rgb, const Var<T>& flow,
               std::span<const std::size_t> frame_counts) const;
  Var<T> embed(const VideoBatch& batch) const;
  /// [V, num_classes] logits from embeddings [V, embed_dim].
  Var<T> logits(const Var<T>& embeddings) const;
  /// Class probabilities for one embedding vector.
  TensorT<T> classify(const TensorT<T>& embedding) const;

  template <typename U>
  ModelT<U> cast() const {
    return ModelT<U>(cfg_, params_.template cast<U>());
  }

 private:
  void check_params() const;

  ModelConfig cfg_;
  ParamSet<T> params_;
};

using Model = ModelT<float>;

/// Temporary single-stream classifier used only during per-frame pretraining.
template <typename T>
ParamSet<T> make_frame_head(const ModelConfig& cfg, StreamKind stream, std::uint64_t seed);

/// Class probabilities [N, C] for frames from one stream followed by the
/// temporary head. The other stream's input is never read.
template <typename T>
Var<T> per_frame_logits(const ModelT<T>& model, const ParamSet<T>& head, StreamKind stream,
                        const Var<T>& rgb, const Var<T>& flow);
template <typename T>
TensorT<T> per_frame_classify(const ModelT<T>& model, const ParamSet<T>& head, StreamKind stream,
                              const TensorT<T>& rgb, const TensorT<T>& flow);

std::string to_string(StreamKind s);
StreamKind parse_stream_kind(const std::string& s);

}  // namespace lrsiam
