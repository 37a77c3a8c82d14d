#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrsiam/loss.hpp"
#include "lrsiam/model.hpp"
#include "lrsiam/transform.hpp"

using namespace lrsiam;

namespace {

using VarD = Var<double>;

ModelConfig small_config() {
  ModelConfig c;
  c.num_classes = 4;
  c.conv1 = 4;
  c.conv2 = 6;
  c.conv3 = 4;
  c.feature_dim = 8;
  c.embed_dim = 16;
  return c;
}

LRVideo random_video(std::size_t frames, std::uint64_t seed, std::size_t label = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  LRVideo v;
  v.id = "v" + std::to_string(seed);
  v.label = label;
  v.frames = Tensor({frames, kLRHeight, kLRWidth, 3});
  for (auto& x : v.frames.data()) x = u(rng);
  v.flow = Tensor({frames, kLRHeight, kLRWidth, kFlowChannels});
  for (auto& x : v.flow->data()) x = u(rng) - 0.5f;
  return v;
}

VideoBatch batch_of(const std::vector<const LRVideo*>& vids) {
  return pack_videos(std::span<const LRVideo* const>(vids.data(), vids.size()));
}

TensorD random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  TensorD t({n, d});
  for (auto& v : t.data()) v = g(rng);
  return t;
}

// Brute force over every ordered pair, halved for the positive term.
double brute_multi_siamese(const TensorD& b1, const TensorD& b2, double m) {
  const std::size_t n = b1.dim(0), d = b1.dim(1);
  auto dist2 = [d](const double* a, const double* b) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  double pos = 0, cross = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      if (k != l) pos += 0.5 * dist2(b1.ptr() + k * d, b1.ptr() + l * d);
      cross += dist2(b1.ptr() + k * d, b2.ptr() + l * d);
    }
  return pos + std::max(0.0, double(n * n) * m * m - cross);
}

}  // namespace

TEST(Structure, DefaultDimensions) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.pyramid_intervals(), 15u);
  EXPECT_EQ(pyramid_intervals(16, 4).size(), 15u);
  EXPECT_EQ(cfg.frame_feature_dim(), 512u);
  EXPECT_EQ(cfg.pooled_dim(), 7680u);
  EXPECT_EQ(cfg.embed_dim, 8192u);
}

TEST(Structure, DefaultModelForwardShapes) {
  const ModelConfig cfg;
  cfg.validate();
  const Model model(cfg, 1);
  const auto video = random_video(16, 2);
  NoGradGuard guard;
  const auto b = batch_of({&video});
  const Var<float> rgb(b.rgb), flow(b.flow);
  EXPECT_EQ(model.frame_features(rgb, flow).shape(), (Shape{16, 512}));
  EXPECT_EQ(model.pooled(rgb, flow, b.frame_counts).shape(), (Shape{1, 7680}));
  EXPECT_EQ(model.embed(b).shape(), (Shape{1, 8192}));
}

TEST(PyramidPool, IntervalsCoverLevels) {
  const auto iv = pyramid_intervals(16, 4);
  EXPECT_EQ(iv[0], (std::pair<std::size_t, std::size_t>{0, 16}));
  EXPECT_EQ(iv[1], (std::pair<std::size_t, std::size_t>{0, 8}));
  EXPECT_EQ(iv[2], (std::pair<std::size_t, std::size_t>{8, 16}));
  EXPECT_EQ(iv[14], (std::pair<std::size_t, std::size_t>{14, 16}));
  EXPECT_THROW(pyramid_intervals(7, 4), ShapeError);
  EXPECT_NO_THROW(pyramid_intervals(8, 4));
}

TEST(PyramidPool, ConstantFeaturesAreTiled) {
  TensorD f({10, 3});
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t d = 0; d < 3; ++d) f[t * 3 + d] = static_cast<double>(d) - 0.5;
  const auto out = pyramid_pool(VarD(f), 4).value();
  ASSERT_EQ(out.size(), 45u);
  for (std::size_t i = 0; i < 45; ++i) EXPECT_EQ(out[i], f[i % 3]);
}

TEST(PyramidPool, MatchesDirectIntervalMaxima) {
  std::mt19937_64 rng(3);
  const auto f = random_rows(11, 2, rng);
  const auto out = pyramid_pool(VarD(f), 3).value();
  // Level 1: [0,11); level 2: [0,5),[5,11); level 3: [0,2),[2,5),[5,8),[8,11).
  const std::vector<std::pair<std::size_t, std::size_t>> iv{{0, 11}, {0, 5}, {5, 11}, {0, 2}, {2, 5}, {5, 8}, {8, 11}};
  for (std::size_t j = 0; j < iv.size(); ++j)
    for (std::size_t d = 0; d < 2; ++d) {
      double m = -1e300;
      for (std::size_t t = iv[j].first; t < iv[j].second; ++t) m = std::max(m, f[t * 2 + d]);
      EXPECT_EQ(out[j * 2 + d], m);
    }
}

TEST(Model, ZeroInputsZeroBiasesGiveZeroFeatures) {
  const Model model(small_config(), 4);
  const Var<float> rgb(Tensor({8, 12, 16, 3})), flow(Tensor({8, 12, 16, 20}));
  const auto features = model.frame_features(rgb, flow);
  for (float v : features.value().data()) EXPECT_EQ(v, 0.f);
}

TEST(Model, DeterministicAndNonDegenerate) {
  const Model model(small_config(), 5);
  const auto a = random_video(8, 6), b = random_video(8, 7);
  NoGradGuard guard;
  const auto ea = model.embed(batch_of({&a})).value();
  EXPECT_EQ(model.embed(batch_of({&a})).value(), ea);
  const auto eb = model.embed(batch_of({&b})).value();
  double d = 0;
  for (std::size_t i = 0; i < ea.size(); ++i) d += std::pow(ea[i] - eb[i], 2);
  EXPECT_GT(d, 0.0);
  // Same seed, same parameters.
  const Model again(small_config(), 5);
  EXPECT_EQ(again.embed(batch_of({&a})).value(), ea);
}

TEST(Model, BatchedEmbeddingMatchesSingle) {
  const Model model(small_config(), 8);
  const auto a = random_video(8, 9), b = random_video(12, 10);
  NoGradGuard guard;
  const auto both = model.embed(batch_of({&a, &b})).value();
  const auto eb = model.embed(batch_of({&b})).value();
  const std::size_t d = small_config().embed_dim;
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(both[d + i], eb[i], 1e-5);
}

TEST(Model, ClassifyWithZeroWeightsIsUniform) {
  Model model(small_config(), 11);
  model.params().get("classifier.weight").mutable_value().fill(0.f);
  model.params().get("classifier.bias").mutable_value().fill(0.f);
  const auto p = model.classify(Tensor({16}, 0.3f));
  ASSERT_EQ(p.size(), 4u);
  for (float v : p.data()) EXPECT_NEAR(v, 0.25f, 1e-6);
  EXPECT_THROW(model.classify(Tensor({15})), ShapeError);
}

TEST(Model, ClassProbabilitiesSumToOne) {
  const Model model(small_config(), 12);
  const auto v = random_video(8, 13);
  NoGradGuard guard;
  const auto e = model.embed(batch_of({&v})).value();
  const auto p = model.classify(e.reshaped({16}));
  double s = 0;
  for (float x : p.data()) s += x;
  EXPECT_NEAR(s, 1.0, 1e-5);
}

TEST(Model, RejectsWrongDims) {
  const Model model(small_config(), 14);
  EXPECT_THROW(model.frame_features(Var<float>(Tensor({2, 12, 16, 4})), Var<float>(Tensor({2, 12, 16, 20}))),
               ShapeError);
  auto short_video = random_video(7, 15);
  EXPECT_THROW(model.embed(batch_of({&short_video})), ShapeError);
  LRVideo no_flow = random_video(8, 16);
  no_flow.flow.reset();
  EXPECT_THROW(batch_of({&no_flow}), std::invalid_argument);
}

TEST(Model, PerFrameClassifierUsesOneStream) {
  const ModelConfig cfg = small_config();
  const Model model(cfg, 17);
  const auto head = make_frame_head<float>(cfg, StreamKind::temporal, 18);
  const auto v = random_video(8, 19);
  const auto p = per_frame_classify(model, head, StreamKind::temporal, v.frames, *v.flow);
  EXPECT_EQ(p.shape(), (Shape{8, 4}));
  // The RGB input is never read by the temporal head.
  const auto p2 = per_frame_classify(model, head, StreamKind::temporal, Tensor(v.frames.shape()), *v.flow);
  EXPECT_EQ(p, p2);
  EXPECT_THROW(parse_stream_kind("audio"), std::invalid_argument);
  EXPECT_EQ(parse_stream_kind("spatial"), StreamKind::spatial);
}

TEST(ContrastivePair, HandFormula) {
  TensorD a({4}, std::vector<double>{0.1, 0.2, 0.0, 0.0});
  TensorD b({4}, std::vector<double>{0.1, 0.2, 0.4, 0.0});  // d = 0.4
  EXPECT_NEAR(contrastive_pair(VarD(a), VarD(b), PairLabel::negative, 1.0).value().item(), 0.36, 1e-12);
  EXPECT_NEAR(contrastive_pair(VarD(a), VarD(b), PairLabel::positive, 1.0).value().item(), 0.16, 1e-12);
  EXPECT_EQ(contrastive_pair(VarD(a), VarD(a), PairLabel::positive, 1.0).value().item(), 0.0);
  EXPECT_EQ(contrastive_pair(VarD(a), VarD(b), PairLabel::negative, 0.3).value().item(), 0.0);
  EXPECT_THROW(contrastive_pair(VarD(a), VarD(TensorD({3})), PairLabel::negative, 1.0), ShapeError);
}

TEST(ContrastivePair, RandomInstancesMatchHandFormula) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 8;
    const auto a = random_rows(1, d, rng), b = random_rows(1, d, rng);
    const double m = 0.5 + trial % 4;
    double dist2 = 0;
    for (std::size_t i = 0; i < d; ++i) dist2 += (a[i] - b[i]) * (a[i] - b[i]);
    const double hinge = std::max(0.0, m - std::sqrt(dist2));
    EXPECT_NEAR(contrastive_pair(VarD(a), VarD(b), PairLabel::positive, m).value().item(), dist2, 1e-7);
    EXPECT_NEAR(contrastive_pair(VarD(a), VarD(b), PairLabel::negative, m).value().item(), hinge * hinge, 1e-7);
  }
}

TEST(MultiSiamese, AllZeroEmbeddings) {
  const VarD z(TensorD({3, 5}));
  EXPECT_DOUBLE_EQ(multi_siamese_loss(z, z, 1.0).value().item(), 9.0);
}

TEST(MultiSiamese, SaturatedHingeAndIdenticalPositives) {
  TensorD b1({2, 2}, 1.0), b2({2, 2}, -1.0);  // cross d^2 = 8 each, sum 32 >= 4 m^2
  EXPECT_EQ(multi_siamese_loss(VarD(b1), VarD(b2), 1.0).value().item(), 0.0);
  EXPECT_THROW(multi_siamese_loss(VarD(b1), VarD(TensorD({3, 2})), 1.0), ShapeError);
  EXPECT_THROW(multi_siamese_loss(VarD(TensorD({0, 2})), VarD(TensorD({0, 2})), 1.0), ShapeError);
}

TEST(MultiSiamese, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 5, d = 1 + (trial / 5) % 8;
    const double m = 0.5 + 0.5 * (trial % 7);
    const auto b1 = random_rows(n, d, rng, 0.3), b2 = random_rows(n, d, rng, 0.3);
    EXPECT_NEAR(multi_siamese_loss(VarD(b1), VarD(b2), m).value().item(), brute_multi_siamese(b1, b2, m), 1e-6)
        << "n=" << n << " d=" << d;
  }
}

TEST(CombinedLoss, Linearity) {
  const VarD c(TensorD::scalar(2.5));
  const std::vector<VarD> cls{VarD(TensorD::scalar(1.0)), VarD(TensorD::scalar(0.5))};
  EXPECT_DOUBLE_EQ(combined_loss<double>(c, cls, LossWeights{}).value().item(), 4.0);
  LossWeights w;
  w.lambda1 = 0.5;
  w.lambda2 = 2.0;
  EXPECT_DOUBLE_EQ(combined_loss<double>(c, cls, w).value().item(), 4.25);
  w.margin = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}
