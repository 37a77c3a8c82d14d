#include "lrsiam/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lrsiam/loss.hpp"
#include "lrsiam/optimizer.hpp"
#include "lrsiam/tensor_io.hpp"

namespace lrsiam {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kInferenceChunk = 16;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

VideoBatch pack_indices(const LRDataset& data, std::span<const std::size_t> idx) {
  std::vector<const LRVideo*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&data.videos.at(i));
  return pack_videos(ptrs);
}

Tensor logits_for(const Model& model, const LRDataset& data, const std::vector<std::size_t>& videos) {
  NoGradGuard guard;
  const std::size_t c = model.config().num_classes;
  Tensor out({std::max<std::size_t>(videos.size(), 1), c});
  for (std::size_t b = 0; b < videos.size(); b += kInferenceChunk) {
    const std::size_t e = std::min(videos.size(), b + kInferenceChunk);
    VideoBatch batch = pack_indices(data, std::span(videos).subspan(b, e - b));
    Tensor z = model.logits(model.embed(batch)).value();
    std::copy(z.data().begin(), z.data().end(), out.ptr() + b * c);
  }
  return out;
}

std::size_t argmax_row(const Tensor& z, std::size_t r) {
  const std::size_t c = z.dim(1);
  const float* row = z.ptr() + r * c;
  return std::size_t(std::max_element(row, row + c) - row);
}

double mean_cross_entropy(const Tensor& z, const std::vector<std::size_t>& labels) {
  const std::size_t c = z.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = z.ptr() + r * c;
    const double mx = *std::max_element(row, row + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(double(row[j]) - mx);
    total += mx + std::log(se) - double(row[labels[r]]);
  }
  return labels.empty() ? 0.0 : total / double(labels.size());
}

bool is_stream_param(const std::string& name, StreamKind s) {
  const std::string p = to_string(s) + ".";
  return name.compare(0, p.size(), p) == 0;
}

void clip_gradients(ParamSet<float>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params.items()) {
    if (!p.var.has_grad()) continue;
    for (float g : p.var.grad().data()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const float s = static_cast<float>(max_norm / norm);
  for (auto& p : params.items()) {
    if (!p.var.has_grad()) continue;
    for (float& g : p.var.grad_mut().data()) g *= s;
  }
}

}  // namespace

std::size_t LRDataset::representative(const std::string& source, std::size_t identity) const {
  auto it = by_source.find(source);
  if (it == by_source.end() || it->second.empty()) {
    throw std::invalid_argument("no LR videos for source '" + source + "'");
  }
  for (std::size_t i : it->second) {
    if (videos[i].transform_index == identity) return i;
  }
  return it->second.front();
}

LRDataset make_lr_dataset(std::vector<std::string> class_names, std::vector<LRVideo> videos) {
  LRDataset d;
  d.class_names = std::move(class_names);
  d.videos = std::move(videos);
  for (std::size_t i = 0; i < d.videos.size(); ++i) d.by_source[d.videos[i].source_id].push_back(i);
  for (auto& [src, idx] : d.by_source) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return d.videos[a].transform_index < d.videos[b].transform_index;
    });
  }
  return d;
}

LRDataset load_lr_dataset(const DatasetManifest& manifest, bool with_flow) {
  if (manifest.kind != ManifestKind::lr) {
    throw ManifestError("expected an LR manifest (run prepare-lr first)");
  }
  std::vector<LRVideo> videos;
  videos.reserve(manifest.videos.size());
  for (const auto& rec : manifest.videos) videos.push_back(load_lr_video(rec, with_flow));
  return make_lr_dataset(manifest.class_names, std::move(videos));
}

TrainingPool build_training_pool(const LRDataset& data, const std::vector<std::string>& sources,
                                 std::size_t pool_size, std::size_t identity,
                                 std::uint64_t pool_seed) {
  if (pool_size == 0) throw std::invalid_argument("pool_size must be >= 1");
  TrainingPool pool;
  for (const auto& src : sources) {
    auto it = data.by_source.find(src);
    if (it == data.by_source.end()) {
      throw std::invalid_argument("training source '" + src + "' has no LR videos");
    }
    const std::size_t rep = data.representative(src, identity);
    std::vector<std::size_t> rest;
    for (std::size_t i : it->second) {
      if (i != rep) rest.push_back(i);
    }
    Rng rng(substream_seed(pool_seed, "pool:" + src));
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<std::size_t> chosen{rep};
    for (std::size_t i = 0; i < rest.size() && chosen.size() < pool_size; ++i) chosen.push_back(rest[i]);
    std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
      return data.videos[a].transform_index < data.videos[b].transform_index;
    });
    pool.sources.push_back(src);
    pool.videos.push_back(std::move(chosen));
  }
  return pool;
}

BatchPlan build_batch_plan(const TrainingPool& pool, const std::vector<std::size_t>& items,
                           std::size_t n, Rng& rng) {
  if (pool.sources.size() < 2) {
    throw std::invalid_argument("batch plan needs at least two distinct HR source videos");
  }
  if (n == 0) throw std::invalid_argument("batch plan: n must be >= 1");
  std::vector<std::size_t> offsets(pool.videos.size() + 1, 0);
  for (std::size_t s = 0; s < pool.videos.size(); ++s) offsets[s + 1] = offsets[s] + pool.videos[s].size();
  BatchPlan plan;
  for (std::size_t item : items) {
    if (item >= pool.sources.size()) throw std::out_of_range("batch plan: item out of range");
    const auto& own = pool.videos[item];
    if (own.size() < n) {
      throw std::invalid_argument("source '" + pool.sources[item] + "' has " +
                                  std::to_string(own.size()) + " LR videos, fewer than n = " +
                                  std::to_string(n));
    }
    PlanItem pi;
    pi.source = item;
    std::vector<std::size_t> b1 = own;
    std::shuffle(b1.begin(), b1.end(), rng);
    b1.resize(n);
    pi.b1 = std::move(b1);
    // Uniform over every LR video of the other sources.
    const std::size_t others = offsets.back() - own.size();
    if (others == 0) throw std::invalid_argument("batch plan: no LR videos from other sources");
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t r = uniform_index(rng, others);
      if (r >= offsets[item]) r += own.size();
      const auto s = std::size_t(std::upper_bound(offsets.begin(), offsets.end(), r) - offsets.begin()) - 1;
      pi.b2.push_back(pool.videos[s][r - offsets[s]]);
    }
    plan.items.push_back(std::move(pi));
  }
  return plan;
}

std::vector<BatchPlan> plan_epoch(const TrainingPool& pool, std::size_t batch_size, std::size_t n,
                                  Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(pool.sources.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<BatchPlan> plans;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    std::vector<std::size_t> items(order.begin() + long(b),
                                   order.begin() + long(std::min(order.size(), b + batch_size)));
    plans.push_back(build_batch_plan(pool, items, n, rng));
  }
  return plans;
}

Var<float> plan_loss(const Model& model, const LRDataset& data, const BatchPlan& plan,
                     TrainMode mode, const LossWeights& weights, std::size_t identity) {
  if (plan.items.empty()) throw std::invalid_argument("plan_loss: empty plan");
  const float inv_b = 1.0f / float(plan.items.size());
  std::vector<std::size_t> videos;
  std::vector<std::size_t> labels;
  if (mode == TrainMode::baseline) {
    for (const auto& it : plan.items) {
      const std::size_t v = data.representative(data.videos[it.b1.front()].source_id, identity);
      videos.push_back(v);
      labels.push_back(data.videos[v].label);
    }
    VideoBatch batch = pack_indices(data, videos);
    Var<float> ce = softmax_cross_entropy(model.logits(model.embed(batch)), std::span<const std::size_t>(labels));
    return scale(ce, inv_b * static_cast<float>(weights.lambda2));
  }
  const std::size_t n = plan.items.front().b1.size();
  for (const auto& it : plan.items) {
    if (it.b1.size() != n || it.b2.size() != n) throw std::invalid_argument("plan_loss: ragged plan");
    videos.insert(videos.end(), it.b1.begin(), it.b1.end());
    videos.insert(videos.end(), it.b2.begin(), it.b2.end());
  }
  for (std::size_t v : videos) labels.push_back(data.videos[v].label);
  VideoBatch batch = pack_indices(data, videos);
  Var<float> emb = model.embed(batch);
  // Classification is averaged over the 2n branches of an item, so lambda2
  // weighs one video's cross-entropy the same way in every mode.
  Var<float> ce = scale(softmax_cross_entropy(model.logits(emb), std::span<const std::size_t>(labels)),
                        1.0f / float(2 * n));
  LossWeights w = weights;
  if (mode == TrainMode::augment) w.lambda1 = 0.0;
  std::vector<Var<float>> contrastive;
  if (w.lambda1 > 0.0) {
    for (std::size_t i = 0; i < plan.items.size(); ++i) {
      const std::size_t base = i * 2 * n;
      contrastive.push_back(
          multi_siamese_loss(slice(emb, base, base + n), slice(emb, base + n, base + 2 * n), w.margin));
    }
  } else {
    contrastive.push_back(Var<float>(Tensor::scalar(0.0f)));
  }
  const Var<float> cls[] = {ce};
  return scale(combined_loss<float>(add_n<float>(contrastive), cls, w), inv_b);
}

std::vector<double> stage1_stream(Model& model, StreamKind stream, const LRDataset& data,
                                  const TrainingPool& pool, const TrainConfig& cfg,
                                  std::uint64_t seed, std::size_t max_steps) {
  const std::string tag = to_string(stream);
  ParamSet<float> head =
      make_frame_head<float>(model.config(), stream, substream_seed(seed, "stage1-head:" + tag));
  SgdMomentum<float> opt_stream(cfg.stage1_lr, cfg.momentum);
  SgdMomentum<float> opt_head(cfg.stage1_lr, cfg.momentum);
  std::vector<std::pair<std::size_t, std::size_t>> frames;  // (video, t)
  for (const auto& vids : pool.videos) {
    for (std::size_t v : vids) {
      for (std::size_t t = 0; t < data.videos[v].num_frames(); ++t) frames.emplace_back(v, t);
    }
  }
  const std::size_t channels = stream == StreamKind::spatial ? 3 : kFlowChannels;
  const std::size_t per = kLRHeight * kLRWidth * channels;
  auto only_stream = [stream](const std::string& name) { return is_stream_param(name, stream); };
  std::vector<double> losses;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    Rng rng(substream_seed(seed, "stage1:" + tag, epoch));
    std::shuffle(frames.begin(), frames.end(), rng);
    for (std::size_t b = 0; b < frames.size(); b += cfg.stage1_batch) {
      const std::size_t e = std::min(frames.size(), b + cfg.stage1_batch);
      Tensor input({e - b, kLRHeight, kLRWidth, channels});
      std::vector<std::size_t> labels;
      for (std::size_t i = b; i < e; ++i) {
        const LRVideo& v = data.videos[frames[i].first];
        const Tensor* src = &v.frames;
        if (stream == StreamKind::temporal) {
          if (!v.flow) throw std::invalid_argument("stage 1: video " + v.id + " has no flow stacks");
          src = &*v.flow;
        }
        std::copy_n(src->ptr() + frames[i].second * per, per, input.ptr() + (i - b) * per);
        labels.push_back(v.label);
      }
      Var<float> x(std::move(input));
      Var<float> loss = scale(
          softmax_cross_entropy(per_frame_logits(model, head, stream, x, x), std::span<const std::size_t>(labels)),
          1.0f / float(e - b));
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("stage 1 (" + tag + ") diverged: loss is " + fmt(value) + " at step " +
                           std::to_string(steps));
      }
      losses.push_back(value);
      loss.backward();
      opt_stream.step(model.params(), only_stream);
      opt_head.step(head);
      model.params().zero_grad();
      head.zero_grad();
      ++steps;
      if (max_steps && steps >= max_steps) return losses;
    }
  }
  return losses;
}

Stage1Result stage1_pretrain(Model& model, const LRDataset& data, const TrainingPool& pool,
                             const TrainConfig& cfg, std::uint64_t seed, const LogFn& log) {
  Stage1Result r;
  auto t0 = std::chrono::steady_clock::now();
  r.spatial_losses = stage1_stream(model, StreamKind::spatial, data, pool, cfg, seed);
  emit(log, "stage1 spatial: " + std::to_string(r.spatial_losses.size()) + " steps, final loss " +
                (r.spatial_losses.empty() ? "-" : fmt(r.spatial_losses.back())) + " (" +
                fmt(seconds_since(t0), 1) + "s)");
  if (model.config().two_stream) {
    t0 = std::chrono::steady_clock::now();
    r.temporal_losses = stage1_stream(model, StreamKind::temporal, data, pool, cfg, seed);
    emit(log, "stage1 temporal: " + std::to_string(r.temporal_losses.size()) +
                  " steps, final loss " +
                  (r.temporal_losses.empty() ? "-" : fmt(r.temporal_losses.back())) + " (" +
                  fmt(seconds_since(t0), 1) + "s)");
  }
  return r;
}

std::vector<std::size_t> predict(const Model& model, const LRDataset& data,
                                 const std::vector<std::size_t>& videos) {
  Tensor z = logits_for(model, data, videos);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < videos.size(); ++r) out.push_back(argmax_row(z, r));
  return out;
}

Tensor embed_videos(const Model& model, const LRDataset& data, const std::vector<std::size_t>& videos) {
  if (videos.empty()) throw std::invalid_argument("embed_videos: no videos");
  NoGradGuard guard;
  const std::size_t d = model.config().embed_dim;
  Tensor out({videos.size(), d});
  for (std::size_t b = 0; b < videos.size(); b += kInferenceChunk) {
    const std::size_t e = std::min(videos.size(), b + kInferenceChunk);
    VideoBatch batch = pack_indices(data, std::span(videos).subspan(b, e - b));
    Tensor emb = model.embed(batch).value();
    std::copy(emb.data().begin(), emb.data().end(), out.ptr() + b * d);
  }
  return out;
}

Metrics evaluate(const Model& model, const LRDataset& data, const std::vector<std::string>& sources,
                 std::size_t identity) {
  if (sources.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<std::size_t> videos;
  std::vector<std::size_t> truth;
  for (const auto& s : sources) {
    const std::size_t v = data.representative(s, identity);
    videos.push_back(v);
    truth.push_back(data.videos[v].label);
  }
  const auto pred = predict(model, data, videos);
  return compute_metrics(truth, pred, data.num_classes());
}

DistanceRatio distance_ratio(const Tensor& emb, const std::vector<std::string>& source_of) {
  if (emb.rank() != 2 || emb.dim(0) != source_of.size()) {
    throw ShapeError("distance_ratio: embeddings " + shape_str(emb.shape()) + " vs " +
                     std::to_string(source_of.size()) + " source ids");
  }
  const std::size_t v = emb.dim(0);
  const std::size_t d = emb.dim(1);
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t j = i + 1; j < v; ++j) {
      double sq = 0.0;
      const float* a = emb.ptr() + i * d;
      const float* b = emb.ptr() + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = double(a[k]) - double(b[k]);
        sq += diff * diff;
      }
      if (source_of[i] == source_of[j]) {
        intra += std::sqrt(sq);
        ++n_intra;
      } else {
        inter += std::sqrt(sq);
        ++n_inter;
      }
    }
  }
  if (n_intra == 0 || n_inter == 0) {
    throw std::invalid_argument("distance_ratio needs at least two sources with two videos each");
  }
  DistanceRatio r;
  r.intra = intra / double(n_intra);
  r.inter = inter / double(n_inter);
  r.ratio = r.inter > 0.0 ? r.intra / r.inter : std::numeric_limits<double>::infinity();
  return r;
}

TrainResult stage2_train(Model& model, const LRDataset& data, const TrainingPool& pool,
                         const std::vector<std::string>& val_sources, const TrainConfig& cfg,
                         const LossWeights& weights, std::uint64_t seed, const Stage2Options& opt,
                         const LogFn& log) {
  SgdMomentum<float> optimizer(cfg.stage2_lr, cfg.momentum);
  Rng rng(substream_seed(seed, "stage2-plans"));
  TrainResult result;
  std::vector<std::size_t> val_videos;
  std::vector<std::size_t> val_labels;
  if (!val_sources.empty()) {
    const TrainingPool val_pool =
        build_training_pool(data, val_sources, cfg.val_per_source, opt.identity, opt.pool_seed);
    for (const auto& videos : val_pool.videos) {
      for (std::size_t v : videos) {
        val_videos.push_back(v);
        val_labels.push_back(data.videos[v].label);
      }
    }
  }
  std::optional<ParamSet<float>> best;
  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t steps = 0;
  bool capped = false;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !capped; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    // Baseline items carry one identity video each; b1/b2 are not used.
    const std::size_t n = cfg.mode == TrainMode::baseline ? 1 : cfg.n;
    const auto plans = plan_epoch(pool, cfg.batch_size, n, rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const auto& plan : plans) {
      Var<float> loss = plan_loss(model, data, plan, cfg.mode, weights, opt.identity);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("stage 2 diverged: loss is " + fmt(value) + " at epoch " +
                           std::to_string(epoch) + " step " + std::to_string(steps) +
                           "; lower train.stage2_lr or set train.grad_clip");
      }
      if (result.first_step_losses.size() < 10) result.first_step_losses.push_back(value);
      loss.backward();
      if (cfg.grad_clip > 0.0) clip_gradients(model.params(), cfg.grad_clip);
      optimizer.step(model.params());
      model.params().zero_grad();
      loss_sum += value;
      ++loss_count;
      ++steps;
      if (opt.max_steps && steps >= opt.max_steps) {
        capped = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_count ? loss_sum / double(loss_count) : 0.0;
    if (!val_videos.empty()) {
      Tensor z = logits_for(model, data, val_videos);
      std::size_t correct = 0;
      for (std::size_t r = 0; r < val_videos.size(); ++r) correct += argmax_row(z, r) == val_labels[r];
      rec.val_accuracy = double(correct) / double(val_videos.size());
      rec.val_loss = mean_cross_entropy(z, val_labels);
    }
    rec.seconds = seconds_since(t0);
    result.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
    emit(log, "epoch " + std::to_string(epoch) + " loss " + fmt(rec.train_loss) + " val_acc " +
                  fmt(rec.val_accuracy, 3) + " val_loss " + fmt(rec.val_loss) + " (" +
                  fmt(rec.seconds, 1) + "s)");
    result.last_val_accuracy = rec.val_accuracy;
    const bool improved = rec.val_accuracy > best_acc ||
                          (rec.val_accuracy == best_acc && rec.val_loss < best_loss);
    if (improved || val_videos.empty()) {
      best_acc = rec.val_accuracy;
      best_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = model.params().clone();
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      emit(log, "early stop after epoch " + std::to_string(epoch) + "; best epoch " +
                    std::to_string(result.best_epoch));
      break;
    }
  }
  if (best) model.params().assign_values(*best);
  result.best_val_accuracy = std::max(best_acc, 0.0);
  return result;
}

RunStats summarize(TrainMode mode, std::vector<SeedResult> seeds) {
  RunStats s;
  s.mode = mode;
  s.seeds = std::move(seeds);
  if (s.seeds.empty()) return s;
  double sum = 0.0;
  for (const auto& r : s.seeds) sum += r.test_accuracy;
  s.mean = sum / double(s.seeds.size());
  if (s.seeds.size() >= 2) {
    double sq = 0.0;
    for (const auto& r : s.seeds) sq += (r.test_accuracy - s.mean) * (r.test_accuracy - s.mean);
    s.std = std::sqrt(sq / double(s.seeds.size() - 1));
    s.std_defined = true;
  }
  return s;
}

void save_model(const fs::path& path, const Model& model) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& p : model.params().items()) entries.emplace_back(p.name, &p.var.value());
  save_checkpoint(path, model.config().fingerprint(), entries);
}

Model load_model(const fs::path& path, const ModelConfig& cfg, const LogFn& warn) {
  CheckpointData ck = load_checkpoint(path, cfg.fingerprint(), warn);
  ParamSet<float> params;
  for (auto& t : ck.tensors) params.add(t.name, std::move(t.value));
  return Model(cfg, std::move(params));
}

namespace {

using ordered_json = nlohmann::ordered_json;

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

ordered_json ratio_json(const DistanceRatio& r) {
  return ordered_json{{"intra", r.intra}, {"inter", r.inter}, {"ratio", r.ratio}};
}

void write_seed_artifacts(const fs::path& dir, TrainMode mode, const SeedResult& r, const Model& model) {
  fs::create_directories(dir);
  {
    std::ofstream hist(dir / "history.jsonl", std::ios::trunc);
    for (const auto& e : r.train.history) {
      hist << ordered_json{{"epoch", e.epoch},           {"train_loss", e.train_loss},
                           {"val_accuracy", e.val_accuracy}, {"val_loss", e.val_loss},
                           {"seconds", e.seconds}}
                  .dump()
           << '\n';
    }
  }
  ordered_json j;
  j["mode"] = to_string(mode);
  j["seed"] = r.seed;
  j["split"] = r.split;
  j["test"] = metrics_json(r.metrics);
  j["best_epoch"] = r.train.best_epoch;
  j["best_val_accuracy"] = r.train.best_val_accuracy;
  j["last_val_accuracy"] = r.train.last_val_accuracy;
  j["first_step_losses"] = r.train.first_step_losses;
  j["embedding_ratio_before"] = ratio_json(r.ratio_before);
  j["embedding_ratio_after"] = ratio_json(r.ratio_after);
  std::ofstream(dir / "metrics.json", std::ios::trunc) << j.dump(2) << '\n';
  save_model(dir / "model.lrck", model);
}

std::uint64_t pool_hash(const LRDataset& data, const TrainingPool& pool) {
  std::uint64_t h = fnv1a64("pool");
  for (const auto& vids : pool.videos) {
    for (std::size_t v : vids) h = fnv1a64(data.videos[v].id + ";", h);
  }
  return h;
}

}  // namespace

std::vector<RunStats> run_experiment(const RunConfig& cfg, const DatasetManifest& manifest,
                                     const LRDataset& data, const std::vector<TrainMode>& modes,
                                     const ExperimentOptions& opt) {
  cfg.validate();
  if (manifest.splits.empty()) throw ManifestError("LR manifest defines no splits");
  if (data.num_classes() != cfg.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes()) +
                      " classes but model.num_classes is " + std::to_string(cfg.model.num_classes));
  }
  const std::size_t identity = cfg.transforms.build().identity_index();
  std::map<TrainMode, std::vector<SeedResult>> results;
  for (std::uint64_t seed : cfg.train.seeds) {
    SplitDef split = manifest.splits[seed % manifest.splits.size()];
    carve_validation(manifest, split, cfg.train.val_fraction, substream_seed(seed, "validation"));
    emit(opt.log, "seed " + std::to_string(seed) + ": split " + split.name + " (" +
                      std::to_string(split.train.size()) + " train / " +
                      std::to_string(split.val.size()) + " val / " +
                      std::to_string(split.test.size()) + " test sources)");
    const TrainingPool pool =
        build_training_pool(data, split.train, cfg.train.pool_size, identity, cfg.transforms.seed);
    const TrainingPool identity_pool =
        build_training_pool(data, split.train, 1, identity, cfg.transforms.seed);
    std::vector<std::size_t> ratio_videos;
    std::vector<std::string> ratio_sources;
    if (opt.compute_ratio) {
      const TrainingPool held_out = build_training_pool(data, split.test, opt.ratio_videos_per_source,
                                                        identity, cfg.transforms.seed);
      for (std::size_t s = 0; s < held_out.sources.size(); ++s) {
        for (std::size_t v : held_out.videos[s]) {
          ratio_videos.push_back(v);
          ratio_sources.push_back(held_out.sources[s]);
        }
      }
    }
    std::optional<DistanceRatio> ratio_before;
    std::map<std::string, ParamSet<float>> stage1_cache;  // keyed by pool kind
    for (TrainMode mode : modes) {
      auto t0 = std::chrono::steady_clock::now();
      TrainConfig tc = cfg.train;
      tc.mode = mode;
      const TrainingPool& mode_pool = mode == TrainMode::baseline ? identity_pool : pool;
      emit(opt.log, "seed " + std::to_string(seed) + " mode " + to_string(mode) + ": pool hash " +
                        std::to_string(pool_hash(data, mode_pool)));
      Model model(cfg.model, substream_seed(seed, "init"));
      if (opt.compute_ratio && !ratio_before) {
        ratio_before = distance_ratio(embed_videos(model, data, ratio_videos), ratio_sources);
      }
      if (!tc.skip_stage1) {
        const std::string key = mode == TrainMode::baseline ? "identity" : "pool";
        auto it = stage1_cache.find(key);
        if (it == stage1_cache.end()) {
          stage1_pretrain(model, data, mode_pool, tc, substream_seed(seed, "stage1"), opt.log);
          ParamSet<float> streams;
          for (const auto& p : model.params().items()) {
            if (is_stream_param(p.name, StreamKind::spatial) || is_stream_param(p.name, StreamKind::temporal)) {
              streams.add(p.name, p.var.value());
            }
          }
          stage1_cache.emplace(key, std::move(streams));
        } else {
          emit(opt.log, "stage1: reusing " + key + "-pool stream weights");
          for (const auto& p : it->second.items()) model.params().get(p.name).mutable_value() = p.var.value();
        }
      }
      Stage2Options s2;
      s2.identity = identity;
      s2.pool_seed = cfg.transforms.seed;
      SeedResult r;
      r.seed = seed;
      r.split = split.name;
      r.train = stage2_train(model, data, mode_pool, split.val, tc, cfg.loss,
                             substream_seed(seed, "stage2"), s2, opt.log);
      r.metrics = evaluate(model, data, split.test, identity);
      r.test_accuracy = r.metrics.accuracy;
      if (opt.compute_ratio) {
        r.ratio_before = *ratio_before;
        r.ratio_after = distance_ratio(embed_videos(model, data, ratio_videos), ratio_sources);
      }
      emit(opt.log, "seed " + std::to_string(seed) + " mode " + to_string(mode) + ": test accuracy " +
                        fmt(r.test_accuracy, 4) + ", embedding ratio " + fmt(r.ratio_before.ratio) +
                        " -> " + fmt(r.ratio_after.ratio) + " (" + fmt(seconds_since(t0), 1) + "s)");
      if (!opt.out_dir.empty()) {
        write_seed_artifacts(opt.out_dir / ("seed_" + std::to_string(seed)) / to_string(mode), mode, r, model);
      }
      results[mode].push_back(std::move(r));
    }
  }
  std::vector<RunStats> out;
  for (TrainMode m : modes) out.push_back(summarize(m, std::move(results[m])));
  return out;
}

}  // namespace lrsiam
