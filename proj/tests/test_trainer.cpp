#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include <unistd.h>

#include "lrsiam/blas.hpp"
#include "lrsiam/trainer.hpp"

using namespace lrsiam;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model(std::size_t classes) {
  ModelConfig c;
  c.num_classes = classes;
  c.conv1 = 4;
  c.conv2 = 6;
  c.conv3 = 4;
  c.feature_dim = 8;
  c.embed_dim = 16;
  return c;
}

// Each class has its own drift direction; each source its own texture; each
// transform shifts the texture. Flow carries the class drift plus noise.
LRDataset synthetic_dataset(std::size_t classes, std::size_t sources_per_class, std::size_t transforms,
                            std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.f, 1.f);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("class" + std::to_string(c));
  std::vector<LRVideo> videos;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < sources_per_class; ++s) {
      const std::string src = "c" + std::to_string(c) + "_s" + std::to_string(s);
      std::vector<float> phase(3);
      for (auto& p : phase) p = g(rng);
      for (std::size_t k = 0; k < transforms; ++k) {
        LRVideo v;
        v.id = src + "_k" + std::to_string(k);
        v.source_id = src;
        v.transform_index = k;
        v.label = c;
        v.frames = Tensor({frames, kLRHeight, kLRWidth, 3});
        v.flow = Tensor({frames, kLRHeight, kLRWidth, kFlowChannels});
        const double dir = 2.0 * M_PI * double(c) / double(classes);
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t y = 0; y < kLRHeight; ++y)
            for (std::size_t x = 0; x < kLRWidth; ++x) {
              const double px = double(x) + double(k) * 0.5 + std::cos(dir) * double(t);
              const double py = double(y) + std::sin(dir) * double(t);
              for (std::size_t ch = 0; ch < 3; ++ch) {
                v.frames[((t * kLRHeight + y) * kLRWidth + x) * 3 + ch] =
                    float(0.5 + 0.4 * std::sin(0.7 * px + phase[ch]) * std::cos(0.5 * py));
              }
              for (std::size_t ch = 0; ch < kFlowChannels; ++ch) {
                const double base = ch % 2 == 0 ? std::cos(dir) : std::sin(dir);
                (*v.flow)[((t * kLRHeight + y) * kLRWidth + x) * kFlowChannels + ch] =
                    float(base + 0.3 * g(rng));
              }
            }
        videos.push_back(std::move(v));
      }
    }
  }
  return make_lr_dataset(std::move(names), std::move(videos));
}

std::vector<std::string> all_sources(const LRDataset& d) {
  std::vector<std::string> out;
  for (const auto& [s, _] : d.by_source) out.push_back(s);
  return out;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.n = 2;
  cfg.pool_size = 3;
  cfg.batch_size = 2;
  cfg.stage1_batch = 16;
  cfg.stage1_epochs = 1;
  cfg.max_epochs = 2;
  cfg.patience = 5;
  cfg.stage2_lr = 0.01;
  return cfg;
}

double intra_inter_ratio(const Model& model, const LRDataset& data) {
  std::vector<std::size_t> idx(data.videos.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::string> src;
  for (auto i : idx) src.push_back(data.videos[i].source_id);
  return distance_ratio(embed_videos(model, data, idx), src).ratio;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("lrsiam_trainer_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

TEST(BatchPlan, SourceDisjointnessWithThreeSources) {
  const auto data = synthetic_dataset(3, 1, 3, 8, 1);
  const auto pool = build_training_pool(data, all_sources(data), 3, 0, 0);
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto plan = build_batch_plan(pool, {0, 1, 2}, 2, rng);
    for (const auto& item : plan.items) {
      const std::string& own = pool.sources[item.source];
      ASSERT_EQ(item.b1.size(), 2u);
      ASSERT_EQ(item.b2.size(), 2u);
      EXPECT_NE(item.b1[0], item.b1[1]);
      for (auto v : item.b1) EXPECT_EQ(data.videos[v].source_id, own);
      for (auto v : item.b2) EXPECT_NE(data.videos[v].source_id, own);
    }
  }
}

TEST(BatchPlan, DeterministicForFixedSeed) {
  const auto data = synthetic_dataset(2, 3, 3, 8, 3);
  const auto pool = build_training_pool(data, all_sources(data), 3, 0, 0);
  Rng a(9), b(9);
  const auto pa = plan_epoch(pool, 2, 2, a);
  const auto pb = plan_epoch(pool, 2, 2, b);
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_EQ(pa.size(), 3u);
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].items.size(); ++j) {
      EXPECT_EQ(pa[i].items[j].b1, pb[i].items[j].b1);
      EXPECT_EQ(pa[i].items[j].b2, pb[i].items[j].b2);
    }
}

TEST(BatchPlan, RejectsSingleSourceAndShortPools) {
  const auto data = synthetic_dataset(1, 1, 3, 8, 4);
  const auto pool = build_training_pool(data, all_sources(data), 3, 0, 0);
  Rng rng(0);
  EXPECT_THROW(build_batch_plan(pool, {0}, 2, rng), std::invalid_argument);
  const auto data2 = synthetic_dataset(2, 1, 3, 8, 4);
  const auto pool2 = build_training_pool(data2, all_sources(data2), 3, 0, 0);
  EXPECT_THROW(build_batch_plan(pool2, {0}, 4, rng), std::invalid_argument);
}

TEST(BatchPlan, DrawFrequenciesWithinThreeSigma) {
  // Pool: 4 sources x 5 videos. b1 picks n = 2 of 5 own videos (p = 0.4);
  // b2 draws 2 videos uniformly from the 15 videos of the other sources.
  const auto data = synthetic_dataset(2, 2, 5, 8, 5);
  const auto pool = build_training_pool(data, all_sources(data), 5, 0, 0);
  Rng rng(6);
  const int plans = 1000;
  std::map<std::size_t, int> b1_count, b2_count;
  for (int i = 0; i < plans; ++i) {
    const auto plan = build_batch_plan(pool, {0}, 2, rng);
    for (auto v : plan.items[0].b1) ++b1_count[v];
    for (auto v : plan.items[0].b2) ++b2_count[v];
  }
  const double p1 = 2.0 / 5.0;
  const double sd1 = std::sqrt(plans * p1 * (1 - p1));
  for (auto v : pool.videos[0]) EXPECT_NEAR(b1_count[v], plans * p1, 3 * sd1) << v;
  const double n2 = 2.0 * plans, p2 = 1.0 / 15.0;
  const double sd2 = std::sqrt(n2 * p2 * (1 - p2));
  for (std::size_t s = 1; s < 4; ++s)
    for (auto v : pool.videos[s]) EXPECT_NEAR(b2_count[v], n2 * p2, 3 * sd2) << v;
}

TEST(TrainingPool, KeepsIdentityAndIsKeyedBySource) {
  const auto data = synthetic_dataset(2, 2, 6, 8, 7);
  const auto sources = all_sources(data);
  const auto a = build_training_pool(data, sources, 3, 0, 11);
  const std::vector<std::string> reversed(sources.rbegin(), sources.rend());
  const auto b = build_training_pool(data, reversed, 3, 0, 11);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    ASSERT_EQ(a.videos[i].size(), 3u);
    EXPECT_EQ(data.videos[a.videos[i][0]].transform_index, 0u);
    EXPECT_EQ(a.videos[i], b.videos[sources.size() - 1 - i]);
  }
}

TEST(Stage1, LossDecreasesOverFiftySteps) {
  blas::set_single_threaded();
  const auto data = synthetic_dataset(3, 4, 2, 8, 8);
  const auto pool = build_training_pool(data, all_sources(data), 2, 0, 0);
  Model model(tiny_model(3), 1);
  auto cfg = small_train();
  cfg.stage1_epochs = 100;
  cfg.stage1_lr = 0.05;
  const auto losses = stage1_stream(model, StreamKind::temporal, data, pool, cfg, 3, 50);
  ASSERT_EQ(losses.size(), 50u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += losses[i];
    last += losses[40 + i];
  }
  EXPECT_LT(last, 0.8 * first);
}

TEST(Stage1, OnlyTouchesItsOwnStream) {
  const auto data = synthetic_dataset(2, 2, 2, 8, 9);
  const auto pool = build_training_pool(data, all_sources(data), 2, 0, 0);
  Model model(tiny_model(2), 2);
  const auto before = model.params().clone();
  stage1_stream(model, StreamKind::spatial, data, pool, small_train(), 4, 5);
  for (const auto& p : model.params().items()) {
    const bool same = p.var.value() == before.get(p.name).value();
    EXPECT_EQ(same, p.name.rfind("spatial.", 0) != 0) << p.name;
  }
}

TEST(Stage1, DeterministicWeights) {
  blas::set_single_threaded();
  const auto data = synthetic_dataset(2, 2, 2, 8, 10);
  const auto pool = build_training_pool(data, all_sources(data), 2, 0, 0);
  Model a(tiny_model(2), 3), b(tiny_model(2), 3);
  stage1_pretrain(a, data, pool, small_train(), 5);
  stage1_pretrain(b, data, pool, small_train(), 5);
  for (const auto& p : a.params().items()) EXPECT_EQ(p.var.value(), b.params().get(p.name).value()) << p.name;
}

TEST(Stage2, ContrastiveOnlyTrainingShrinksIntraSourceDistances) {
  blas::set_single_threaded();
  const auto data = synthetic_dataset(2, 3, 3, 8, 11);
  const auto sources = all_sources(data);
  const auto pool = build_training_pool(data, sources, 3, 0, 0);
  Model model(tiny_model(2), 4);
  const double before = intra_inter_ratio(model, data);
  auto cfg = small_train();
  cfg.max_epochs = 15;
  cfg.stage2_lr = 0.002;
  LossWeights w;
  w.lambda2 = 0.0;
  w.margin = 1.0;
  stage2_train(model, data, pool, {}, cfg, w, 6);
  const double after = intra_inter_ratio(model, data);
  EXPECT_LT(after, before);
}

TEST(Stage2, FirstLossesAndWeightsAreDeterministic) {
  blas::set_single_threaded();
  const auto data = synthetic_dataset(2, 3, 3, 8, 12);
  const auto sources = all_sources(data);
  const auto pool = build_training_pool(data, sources, 3, 0, 0);
  auto run = [&](Model& m) { return stage2_train(m, data, pool, {sources[0]}, small_train(), LossWeights{}, 7); };
  Model a(tiny_model(2), 5), b(tiny_model(2), 5);
  const auto ra = run(a), rb = run(b);
  ASSERT_EQ(ra.first_step_losses.size(), 6u);
  EXPECT_EQ(ra.first_step_losses, rb.first_step_losses);
  for (const auto& p : a.params().items()) EXPECT_EQ(p.var.value(), b.params().get(p.name).value());
}

TEST(Stage2, AugmentIgnoresContrastiveTerm) {
  const auto data = synthetic_dataset(2, 2, 3, 8, 13);
  const auto pool = build_training_pool(data, all_sources(data), 3, 0, 0);
  const Model model(tiny_model(2), 6);
  Rng rng(1);
  const auto plan = build_batch_plan(pool, {0, 1}, 2, rng);
  LossWeights heavy;
  heavy.lambda1 = 100.0;
  heavy.margin = 50.0;
  const double aug = plan_loss(model, data, plan, TrainMode::augment, heavy, 0).value().item();
  const double aug_plain = plan_loss(model, data, plan, TrainMode::augment, LossWeights{}, 0).value().item();
  const double multi = plan_loss(model, data, plan, TrainMode::multi_siamese, heavy, 0).value().item();
  EXPECT_FLOAT_EQ(aug, aug_plain);
  EXPECT_GT(multi, aug);
}

TEST(Stage2, NonFiniteLossAborts) {
  auto data = synthetic_dataset(2, 2, 3, 8, 14);
  // Overflowing activations: ReLU and max pooling would swallow a NaN input,
  // but infinities turn into NaN in the fully connected layers.
  for (auto& v : data.videos) v.frames.fill(3e38f);
  const auto pool = build_training_pool(data, all_sources(data), 3, 0, 0);
  Model model(tiny_model(2), 7);
  EXPECT_THROW(stage2_train(model, data, pool, {}, small_train(), LossWeights{}, 1), NumericError);
}

TEST(Evaluate, PerfectAndEmpty) {
  const auto data = synthetic_dataset(2, 2, 1, 8, 15);
  const Model model(tiny_model(2), 8);
  EXPECT_THROW(evaluate(model, data, {}, 0), std::invalid_argument);
  const auto m = evaluate(model, data, all_sources(data), 0);
  EXPECT_EQ(m.samples, 4u);
}

TEST(DistanceRatio, MatchesDirectComputation) {
  Tensor e({4, 2}, std::vector<float>{0, 0, 3, 4, 10, 0, 10, 1});
  const auto r = distance_ratio(e, {"a", "a", "b", "b"});
  const double inter = (10 + std::hypot(10, 1) + std::hypot(7, 4) + std::hypot(7, 3)) / 4.0;
  EXPECT_NEAR(r.intra, 3.0, 1e-9);
  EXPECT_NEAR(r.inter, inter, 1e-6);
  EXPECT_NEAR(r.ratio, 3.0 / inter, 1e-6);
  EXPECT_THROW(distance_ratio(e, {"a", "b", "c", "d"}), std::invalid_argument);
}

TEST(Summary, SingleSeedHasUndefinedStd) {
  SeedResult r;
  r.test_accuracy = 0.4;
  const auto one = summarize(TrainMode::augment, {r});
  EXPECT_FALSE(one.std_defined);
  EXPECT_EQ(one.std, 0.0);
  SeedResult r2;
  r2.test_accuracy = 0.6;
  const auto two = summarize(TrainMode::augment, {r, r2});
  EXPECT_TRUE(two.std_defined);
  EXPECT_NEAR(two.mean, 0.5, 1e-12);
  EXPECT_NEAR(two.std, std::sqrt(0.02), 1e-12);
}

TEST(ModelCheckpoint, RoundTripIsBitExact) {
  TempDir dir;
  const Model model(tiny_model(3), 9);
  save_model(dir.path() / "m.lrck", model);
  std::vector<std::string> warnings;
  const Model back = load_model(dir.path() / "m.lrck", tiny_model(3), [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_TRUE(warnings.empty());
  for (const auto& p : model.params().items()) EXPECT_EQ(p.var.value(), back.params().get(p.name).value());
  auto other = tiny_model(3);
  other.two_stream = false;
  EXPECT_ANY_THROW(load_model(dir.path() / "m.lrck", other, [&](const std::string& w) { warnings.push_back(w); }));
  EXPECT_FALSE(warnings.empty());
}
