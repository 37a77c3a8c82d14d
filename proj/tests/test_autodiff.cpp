#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lrsiam/autodiff.hpp"
#include "lrsiam/blas.hpp"
#include "lrsiam/gradcheck.hpp"

using namespace lrsiam;

namespace {

using VarD = Var<double>;

TensorD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Direct loops over output pixels, kernel taps and channels.
TensorD naive_conv(const TensorD& in, const TensorD& k, const TensorD& b, std::size_t stride,
                   std::size_t pad) {
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  const std::size_t kh = k.dim(0), kw = k.dim(1), O = k.dim(3);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  TensorD out({oh, ow, O});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
            const long ix = static_cast<long>(x * stride + j) - static_cast<long>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
            for (std::size_t c = 0; c < C; ++c) {
              acc += in[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C + c] *
                     k[((i * kw + j) * C + c) * O + o];
            }
          }
        out[(y * ow + x) * O + o] = acc;
      }
  return out;
}

}  // namespace

TEST(Conv2d, MatchesNaiveLoopsOnSmallInput) {
  const auto in = random_tensor({5, 4, 2}, 1);
  const auto k = random_tensor({3, 3, 2, 3}, 2);
  const auto b = random_tensor({3}, 3);
  for (std::size_t pad : {0, 1}) {
    for (std::size_t stride : {1, 2}) {
      const auto got = conv2d(VarD(in), VarD(k), VarD(b), stride, pad).value();
      const auto want = naive_conv(in, k, b, stride, pad);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
    }
  }
}

TEST(Conv2d, BatchedMatchesPerImage) {
  const auto in = random_tensor({2, 5, 4, 2}, 4);
  const auto k = random_tensor({3, 3, 2, 3}, 5);
  const auto b = random_tensor({3}, 6);
  const auto got = conv2d(VarD(in), VarD(k), VarD(b), 1, 1).value();
  for (std::size_t n = 0; n < 2; ++n) {
    TensorD img({5, 4, 2});
    std::copy_n(in.ptr() + n * 40, 40, img.ptr());
    const auto want = naive_conv(img, k, b, 1, 1);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[n * want.size() + i], want[i], 1e-9);
  }
}

TEST(Conv2d, IdentityKernelReproducesInput) {
  const auto in = random_tensor({3, 3, 1}, 7);
  const auto out = conv2d(VarD(in), VarD(TensorD({1, 1, 1, 1}, 1.0)), VarD(TensorD({1})), 1, 0).value();
  EXPECT_EQ(out, in);
}

TEST(Conv2d, ZeroInputGivesBias) {
  const auto k = random_tensor({3, 3, 2, 2}, 8);
  TensorD b({2}, std::vector<double>{0.5, -2.0});
  const auto out = conv2d(VarD(TensorD({4, 4, 2})), VarD(k), VarD(b), 1, 1).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], b[i % 2]);
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(VarD(TensorD({4, 4, 3})), VarD(TensorD({3, 3, 2, 2})), VarD(TensorD({2})), 1, 1),
               ShapeError);
  EXPECT_THROW(conv2d(VarD(TensorD({4, 4, 2})), VarD(TensorD({3, 3, 2, 2})), VarD(TensorD({3})), 1, 1),
               ShapeError);
}

TEST(MaxPool, ForcedMaximum) {
  TensorD in({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const auto out = max_pool2d(VarD(in), 2, 2).value();
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], 4.0);
}

TEST(MaxPool, ConstantInputStaysConstant) {
  const auto out = max_pool2d(VarD(TensorD({6, 4, 3}, 0.25)), 2, 2).value();
  EXPECT_EQ(out.shape(), (Shape{3, 2, 3}));
  for (double v : out.data()) EXPECT_EQ(v, 0.25);
}

TEST(MaxPool, RejectsOversizedWindow) {
  EXPECT_THROW(max_pool2d(VarD(TensorD({2, 2, 1})), 3, 1), ShapeError);
}

TEST(FullyConnected, IdentityAndBias) {
  const auto x = random_tensor({4}, 9);
  TensorD eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  EXPECT_EQ(fully_connected(VarD(x), VarD(eye), VarD(TensorD({4}))).value(), x);
  const auto b = random_tensor({3}, 10);
  EXPECT_EQ(fully_connected(VarD(x), VarD(TensorD({4, 3})), VarD(b)).value(), b);
}

TEST(FullyConnected, RejectsMismatch) {
  EXPECT_THROW(fully_connected(VarD(TensorD({5})), VarD(TensorD({4, 3})), VarD(TensorD({3}))), ShapeError);
  EXPECT_THROW(fully_connected(VarD(TensorD({4})), VarD(TensorD({4, 3})), VarD(TensorD({2}))), ShapeError);
}

TEST(TemporalMax, SingleAndRepeatedInputs) {
  const VarD v(random_tensor({3, 2}, 11));
  const std::vector<VarD> one{v};
  EXPECT_EQ(temporal_max<double>(one).value(), v.value());
  const std::vector<VarD> three{v, v, v};
  EXPECT_EQ(temporal_max<double>(three).value(), v.value());
  EXPECT_THROW(temporal_max<double>(std::vector<VarD>{}), std::invalid_argument);
}

TEST(TemporalMax, TieRoutesGradientToFirst) {
  VarD a(TensorD({1}, 1.0), true), b(TensorD({1}, 1.0), true);
  const std::vector<VarD> in{a, b};
  sum(temporal_max<double>(in)).backward();
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
}

TEST(Concat, JoinsAlongAxis) {
  TensorD a({2, 1}, std::vector<double>{1, 2}), b({2, 2}, std::vector<double>{3, 4, 5, 6});
  const std::vector<VarD> parts{VarD(a), VarD(b)};
  const auto out = concat<double>(parts, 1).value();
  EXPECT_EQ(out, TensorD({2, 3}, std::vector<double>{1, 3, 4, 2, 5, 6}));
  const std::vector<VarD> bad{VarD(a), VarD(TensorD({3, 1}))};
  EXPECT_THROW(concat<double>(bad, 1), ShapeError);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 5u, 10u}) {
    const double loss = softmax_cross_entropy(VarD(TensorD({c}, 0.7)), std::size_t{1}).value().item();
    EXPECT_NEAR(loss, std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  TensorD logits({2}, std::vector<double>{1000.0, 0.0});
  const double l0 = softmax_cross_entropy(VarD(logits), std::size_t{0}).value().item();
  EXPECT_TRUE(std::isfinite(l0));
  EXPECT_NEAR(l0, 0.0, 1e-12);
  const double l1 = softmax_cross_entropy(VarD(logits), std::size_t{1}).value().item();
  EXPECT_NEAR(l1, 1000.0, 1e-9);
  Tensor f({2}, std::vector<float>{1000.f, 0.f});
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy(Var<float>(f), std::size_t{1}).value().item()));
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
  EXPECT_THROW(softmax_cross_entropy(VarD(TensorD({3})), std::size_t{3}), std::out_of_range);
}

TEST(Softmax, RowsSumToOne) {
  const auto p = softmax(random_tensor({4, 7}, 12, -20, 20));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += p[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Backward, AccumulatesThroughSharedNodes) {
  VarD x(TensorD({2}, std::vector<double>{1.5, -2.0}), true);
  // f = sum(x*x) + sum(3x) -> df/dx = 2x + 3
  const std::vector<VarD> terms{sum(mul(x, x)), sum(scale(x, 3.0))};
  add_n<double>(terms).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -1.0);
}

TEST(Backward, NoGradGuardBuildsNoGraph) {
  VarD x(TensorD({2}, 1.0), true);
  NoGradGuard guard;
  const VarD y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_FALSE(grad_enabled());
}

TEST(Backward, RejectsNonScalarRoot) {
  VarD x(TensorD({2}, 1.0), true);
  EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(Sqrt, ZeroSubgradientAtZero) {
  VarD x(TensorD({2}, std::vector<double>{0.0, 4.0}), true);
  sum(lrsiam::sqrt(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.25);
}

TEST(Gradcheck, ConvReluFcCrossEntropyChain) {
  // Coordinates whose stencil crosses a ReLU kink are skipped and counted.
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto input = random_tensor({12, 16, 3}, 100 + seed);
    const auto kernel = random_tensor({3, 3, 3, 2}, 200 + seed, -0.5, 0.5);
    const auto bias = random_tensor({2}, 300 + seed, -0.1, 0.1);
    const auto w = random_tensor({12 * 16 * 2, 4}, 400 + seed, -0.05, 0.05);
    const auto wb = random_tensor({4}, 500 + seed);
    auto graph = [](std::span<const VarD> v) {
      auto h = relu(conv2d(v[0], v[1], v[2], 1, 1));
      auto logits = fully_connected(reshape(h, {12 * 16 * 2}), v[3], v[4]);
      return softmax_cross_entropy(logits, std::size_t{2});
    };
    std::vector<TensorD> inputs{input, kernel, bias, w, wb};
    GradcheckOptions opt;
    opt.epsilon = 1e-3;
    opt.skip_kinks = true;
    const auto rep = gradcheck<double>(graph, inputs, opt);
    EXPECT_LT(rep.max_rel_error, 1e-3) << "seed " << seed;
    EXPECT_LE(rep.coords_skipped * 20, rep.coords_checked + rep.coords_skipped) << "seed " << seed;
  }
}

TEST(Gradcheck, DetectsWrongGradient) {
  // f = sum(x * x) with one factor detached: reverse mode sees x, not 2x.
  auto graph = [](std::span<const VarD> v) {
    VarD detached(v[0].value());  // no gradient flows through this copy
    return sum(mul(v[0], detached));
  };
  std::vector<TensorD> inputs{random_tensor({3}, 13, 0.5, 1.0)};
  const auto rep = gradcheck<double>(graph, inputs, GradcheckOptions{});
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.max_rel_error, 0.3);
}

TEST(Blas, GemmMatchesLoops) {
  const std::size_t m = 3, n = 4, k = 5;
  const auto a = random_tensor({m, k}, 14), b = random_tensor({k, n}, 15);
  TensorD c({m, n});
  blas::gemm<double>(false, false, m, n, k, 1.0, a.ptr(), k, b.ptr(), n, 0.0, c.ptr(), n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      EXPECT_NEAR(c[i * n + j], s, 1e-12);
    }
}
