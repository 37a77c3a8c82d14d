#include "lrsiam/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lrsiam/rng.hpp"

namespace lrsiam {

namespace {

constexpr std::size_t kPooledH = kLRHeight / 2;
constexpr std::size_t kPooledW = kLRWidth / 2;

const char* prefix(StreamKind s) { return s == StreamKind::spatial ? "spatial" : "temporal"; }

std::size_t stream_channels(StreamKind s) { return s == StreamKind::spatial ? 3 : kFlowChannels; }

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases (zero-initialised)
};

void add_conv(std::vector<ParamSpec>& out, const std::string& name, std::size_t cin, std::size_t cout) {
  out.push_back({name + ".weight", {3, 3, cin, cout}, 9 * cin});
  out.push_back({name + ".bias", {cout}, 0});
}

void add_fc(std::vector<ParamSpec>& out, const std::string& name, std::size_t din, std::size_t dout) {
  out.push_back({name + ".weight", {din, dout}, din});
  out.push_back({name + ".bias", {dout}, 0});
}

void add_stream(std::vector<ParamSpec>& out, const ModelConfig& cfg, StreamKind s) {
  const std::string p = prefix(s);
  add_conv(out, p + ".conv1", stream_channels(s), cfg.conv1);
  add_conv(out, p + ".conv2", cfg.conv1, cfg.conv2);
  add_conv(out, p + ".conv3", cfg.conv2, cfg.conv3);
  add_fc(out, p + ".fc", kPooledH * kPooledW * cfg.conv3, cfg.feature_dim);
}

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  add_stream(out, cfg, StreamKind::spatial);
  if (cfg.two_stream) add_stream(out, cfg, StreamKind::temporal);
  add_fc(out, "embed.fc1", cfg.pooled_dim(), cfg.embed_dim);
  add_fc(out, "embed.fc2", cfg.embed_dim, cfg.embed_dim);
  add_fc(out, "classifier", cfg.embed_dim, cfg.num_classes);
  return out;
}

// Kaiming-uniform on fan-in; each tensor draws from its own name-keyed stream.
template <typename T>
TensorT<T> init_param(const ParamSpec& spec, std::uint64_t seed) {
  TensorT<T> t(spec.shape);
  if (spec.fan_in == 0) return t;
  Rng rng(substream_seed(seed, spec.name));
  const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Var<T> layer_fc(const ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  return fully_connected(x, ps.get(name + ".weight"), ps.get(name + ".bias"));
}

template <typename T>
Var<T> layer_conv(const ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  return conv2d(x, ps.get(name + ".weight"), ps.get(name + ".bias"), 1, 1);
}

}  // namespace

std::uint64_t ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "lrsiam-model/v1 classes=" << num_classes << " conv=" << conv1 << ',' << conv2 << ','
     << conv3 << " feature=" << feature_dim << " embed=" << embed_dim
     << " pyramid=" << pyramid_level << " two_stream=" << two_stream;
  return fnv1a64(os.str());
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (conv1 == 0 || conv2 == 0 || conv3 == 0 || feature_dim == 0 || embed_dim == 0) {
    throw std::invalid_argument("model: layer widths must be positive");
  }
  if (pyramid_level < 1 || pyramid_level > 8) {
    throw std::invalid_argument("model: pyramid_level must be in [1, 8]");
  }
}

std::string to_string(StreamKind s) { return prefix(s); }

StreamKind parse_stream_kind(const std::string& s) {
  if (s == "spatial") return StreamKind::spatial;
  if (s == "temporal") return StreamKind::temporal;
  throw std::invalid_argument("unknown stream selector '" + s + "' (expected spatial or temporal)");
}

std::vector<std::pair<std::size_t, std::size_t>> pyramid_intervals(std::size_t frames,
                                                                   std::size_t level) {
  if (level == 0) throw std::invalid_argument("pyramid level must be >= 1");
  const std::size_t min_t = std::size_t{1} << (level - 1);
  if (frames < min_t) {
    throw ShapeError("pyramid_pool: level " + std::to_string(level) + " needs at least " +
                     std::to_string(min_t) + " frames, got " + std::to_string(frames));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t l = 1; l <= level; ++l) {
    const std::size_t parts = std::size_t{1} << (l - 1);
    for (std::size_t j = 0; j < parts; ++j) {
      out.emplace_back(frames * j / parts, frames * (j + 1) / parts);
    }
  }
  return out;
}

template <typename T>
Var<T> pyramid_pool(const Var<T>& features, std::size_t level) {
  if (features.shape().size() != 2) {
    throw ShapeError("pyramid_pool: expected [T, D] features, got " + shape_str(features.shape()));
  }
  std::vector<Var<T>> pooled;
  for (const auto& [b, e] : pyramid_intervals(features.shape()[0], level)) {
    pooled.push_back(interval_max(features, b, e));
  }
  return concat<T>(pooled, 0);
}

VideoBatch pack_videos(std::span<const LRVideo* const> videos) {
  if (videos.empty()) throw std::invalid_argument("pack_videos: no videos");
  std::size_t total = 0;
  for (const LRVideo* v : videos) {
    if (!v->flow) throw std::invalid_argument("pack_videos: video " + v->id + " has no flow stacks");
    if (v->frames.shape() != Shape{v->num_frames(), kLRHeight, kLRWidth, 3} ||
        v->flow->shape() != Shape{v->num_frames(), kLRHeight, kLRWidth, kFlowChannels}) {
      throw ShapeError("pack_videos: video " + v->id + " has frames " + shape_str(v->frames.shape()) +
                       " and flow " + shape_str(v->flow->shape()));
    }
    total += v->num_frames();
  }
  VideoBatch b;
  b.rgb = Tensor({total, kLRHeight, kLRWidth, 3});
  b.flow = Tensor({total, kLRHeight, kLRWidth, kFlowChannels});
  std::size_t ro = 0;
  std::size_t fo = 0;
  for (const LRVideo* v : videos) {
    std::copy(v->frames.data().begin(), v->frames.data().end(), b.rgb.ptr() + ro);
    std::copy(v->flow->data().begin(), v->flow->data().end(), b.flow.ptr() + fo);
    ro += v->frames.size();
    fo += v->flow->size();
    b.frame_counts.push_back(v->num_frames());
    b.labels.push_back(v->label);
  }
  return b;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& spec : param_layout(cfg)) out.emplace_back(spec.name, spec.shape);
  return out;
}

template <typename T>
ModelT<T>::ModelT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& spec : param_layout(cfg_)) params_.add(spec.name, init_param<T>(spec, seed));
}

template <typename T>
ModelT<T>::ModelT(const ModelConfig& cfg, ParamSet<T> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  check_params();
}

template <typename T>
void ModelT<T>::check_params() const {
  const auto layout = param_layout(cfg_);
  for (const auto& spec : layout) {
    if (!params_.contains(spec.name)) throw std::invalid_argument("model parameters missing " + spec.name);
    if (params_.get(spec.name).shape() != spec.shape) {
      throw ShapeError("model parameter " + spec.name + " has shape " +
                       shape_str(params_.get(spec.name).shape()) + ", expected " +
                       shape_str(spec.shape));
    }
  }
  if (params_.size() != layout.size()) {
    throw std::invalid_argument("model parameters contain " + std::to_string(params_.size()) +
                                " tensors, expected " + std::to_string(layout.size()));
  }
}

template <typename T>
Var<T> ModelT<T>::stream_features(StreamKind stream, const Var<T>& frames) const {
  const Shape& s = frames.shape();
  const std::size_t c = stream_channels(stream);
  if (s.size() != 4 || s[1] != kLRHeight || s[2] != kLRWidth || s[3] != c) {
    throw ShapeError(std::string(prefix(stream)) + " stream expects [N, 12, 16, " +
                     std::to_string(c) + "] input, got " + shape_str(s));
  }
  if (stream == StreamKind::temporal && !cfg_.two_stream) {
    throw std::invalid_argument("temporal stream requested from a one-stream model");
  }
  const std::string p = prefix(stream);
  Var<T> x = relu(layer_conv(params_, p + ".conv1", frames));
  x = relu(layer_conv(params_, p + ".conv2", x));
  x = max_pool2d(x, 2, 2);
  x = relu(layer_conv(params_, p + ".conv3", x));
  x = reshape(x, {s[0], kPooledH * kPooledW * cfg_.conv3});
  return relu(layer_fc(params_, p + ".fc", x));
}

template <typename T>
Var<T> ModelT<T>::frame_features(const Var<T>& rgb, const Var<T>& flow) const {
  Var<T> spatial = stream_features(StreamKind::spatial, rgb);
  if (!cfg_.two_stream) return spatial;
  if (flow.shape()[0] != rgb.shape()[0]) {
    throw ShapeError("frame_features: rgb " + shape_str(rgb.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  const Var<T> parts[] = {spatial, stream_features(StreamKind::temporal, flow)};
  return concat<T>(parts, 1);
}

template <typename T>
Var<T> ModelT<T>::pooled(const Var<T>& rgb, const Var<T>& flow,
                         std::span<const std::size_t> frame_counts) const {
  std::size_t total = 0;
  for (std::size_t n : frame_counts) total += n;
  if (frame_counts.empty() || total != rgb.shape()[0]) {
    throw ShapeError("pooled: frame counts do not add up to " + shape_str(rgb.shape()));
  }
  Var<T> feats = frame_features(rgb, flow);
  std::vector<Var<T>> videos;
  std::size_t off = 0;
  for (std::size_t n : frame_counts) {
    Var<T> v = pyramid_pool(slice(feats, off, off + n), cfg_.pyramid_level);
    videos.push_back(reshape(v, {1, cfg_.pooled_dim()}));
    off += n;
  }
  return concat<T>(videos, 0);
}

template <typename T>
Var<T> ModelT<T>::embed(const Var<T>& rgb, const Var<T>& flow,
                        std::span<const std::size_t> frame_counts) const {
  Var<T> x = pooled(rgb, flow, frame_counts);
  x = relu(layer_fc(params_, "embed.fc1", x));
  return relu(layer_fc(params_, "embed.fc2", x));
}

template <typename T>
Var<T> ModelT<T>::embed(const VideoBatch& batch) const {
  Var<T> rgb(batch.rgb.template cast<T>());
  Var<T> flow(batch.flow.template cast<T>());
  return embed(rgb, flow, batch.frame_counts);
}

template <typename T>
Var<T> ModelT<T>::logits(const Var<T>& embeddings) const {
  return layer_fc(params_, "classifier", embeddings);
}

template <typename T>
TensorT<T> ModelT<T>::classify(const TensorT<T>& embedding) const {
  if (embedding.size() != cfg_.embed_dim) {
    throw ShapeError("classify: embedding " + shape_str(embedding.shape()) + " vs embed_dim " +
                     std::to_string(cfg_.embed_dim));
  }
  NoGradGuard guard;
  Var<T> e(embedding.reshaped({cfg_.embed_dim}));
  return softmax(logits(e).value());
}

template <typename T>
ParamSet<T> make_frame_head(const ModelConfig& cfg, StreamKind stream, std::uint64_t seed) {
  std::vector<ParamSpec> specs;
  add_fc(specs, std::string("head.") + prefix(stream), cfg.feature_dim, cfg.num_classes);
  ParamSet<T> head;
  for (const auto& spec : specs) head.add(spec.name, init_param<T>(spec, seed));
  return head;
}

template <typename T>
Var<T> per_frame_logits(const ModelT<T>& model, const ParamSet<T>& head, StreamKind stream,
                        const Var<T>& rgb, const Var<T>& flow) {
  const Var<T>& input = stream == StreamKind::spatial ? rgb : flow;
  Var<T> f = model.stream_features(stream, input);
  return layer_fc(head, std::string("head.") + prefix(stream), f);
}

template <typename T>
TensorT<T> per_frame_classify(const ModelT<T>& model, const ParamSet<T>& head, StreamKind stream,
                              const TensorT<T>& rgb, const TensorT<T>& flow) {
  NoGradGuard guard;
  auto batched = [](const TensorT<T>& t) {
    if (t.rank() == 3) {
      Shape s{1};
      s.insert(s.end(), t.shape().begin(), t.shape().end());
      return t.reshaped(s);
    }
    return t;
  };
  Var<T> r(batched(rgb));
  Var<T> f(batched(flow));
  return softmax(per_frame_logits(model, head, stream, r, f).value());
}

template class ModelT<float>;
template class ModelT<double>;
template Var<float> pyramid_pool(const Var<float>&, std::size_t);
template Var<double> pyramid_pool(const Var<double>&, std::size_t);
template ParamSet<float> make_frame_head(const ModelConfig&, StreamKind, std::uint64_t);
template ParamSet<double> make_frame_head(const ModelConfig&, StreamKind, std::uint64_t);
template Var<float> per_frame_logits(const ModelT<float>&, const ParamSet<float>&, StreamKind,
                                     const Var<float>&, const Var<float>&);
template Var<double> per_frame_logits(const ModelT<double>&, const ParamSet<double>&, StreamKind,
                                      const Var<double>&, const Var<double>&);
template TensorT<float> per_frame_classify(const ModelT<float>&, const ParamSet<float>&,
                                           StreamKind, const TensorT<float>&,
                                           const TensorT<float>&);
template TensorT<double> per_frame_classify(const ModelT<double>&, const ParamSet<double>&,
                                            StreamKind, const TensorT<double>&,
                                            const TensorT<double>&);

}  // namespace lrsiam
