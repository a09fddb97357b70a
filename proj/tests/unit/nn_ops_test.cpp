#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mfp/gradcheck_suite.hpp"
#include "mfp/nn.hpp"
#include "mfp/ops.hpp"

using namespace mfp;

namespace {

// Direct-loop convolution, zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias, int stride,
                          int dil, int pad) {
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), K = w.dim(2);
  const auto Ho = (H + 2 * pad - (K - 1) * dil - 1) / stride + 1;
  const auto Wo = (W + 2 * pad - (K - 1) * dil - 1) / stride + 1;
  Tensor<double> y({B, O, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double s = bias ? (*bias)[static_cast<size_t>(o)] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t u = 0; u < K; ++u)
              for (int64_t v = 0; v < K; ++v) {
                const auto yy = i * stride - pad + u * dil, xx = j * stride - pad + v * dil;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                s += w.at(o, c, u, v) * x.at(b, c, yy, xx);
              }
          y.at(b, o, i, j) = s;
        }
  return y;
}

void expect_near_all(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Conv2d, MatchesDirectLoopOracle) {
  struct Case { int64_t c, o, h, w, k; int stride, dil; };
  const Case cases[] = {{3, 4, 8, 8, 3, 1, 1}, {2, 3, 8, 7, 3, 2, 1}, {2, 2, 8, 8, 3, 1, 2},
                        {3, 2, 8, 8, 3, 2, 2}, {1, 5, 6, 6, 5, 1, 1}, {4, 3, 5, 5, 1, 1, 1},
                        {2, 2, 16, 16, 3, 4, 4}};
  uint64_t seed = 1;
  for (const auto& k : cases) {
    Graph<double> g;
    const auto x = Tensor<double>::random({2, k.c, k.h, k.w}, {seed++});
    const auto w = Tensor<double>::random({k.o, k.c, k.k, k.k}, {seed++});
    const auto b = Tensor<double>::random({k.o}, {seed++});
    Conv2dOptions opt;
    opt.stride = k.stride;
    opt.dilation = k.dil;
    auto y = conv2d(g.input(x), g.input(w), g.input(b), opt);
    const int pad = static_cast<int>((effective_extent(k.k, k.dil) - 1) / 2);
    expect_near_all(y.value(), naive_conv(x, w, &b, k.stride, k.dil, pad), 1e-12);
    EXPECT_EQ(y.dim(2), conv_output_extent(k.h, k.k, opt));
  }
}

TEST(Conv2d, NoBiasOverloadAndShapeErrors) {
  Graph<double> g;
  const auto x = Tensor<double>::random({1, 2, 5, 5}, {3});
  const auto w = Tensor<double>::random({3, 2, 3, 3}, {4});
  expect_near_all(conv2d(g.input(x), g.input(w)).value(), naive_conv(x, w, nullptr, 1, 1, 1), 1e-12);
  EXPECT_THROW(conv2d(g.input(x), g.input(Tensor<double>({3, 4, 3, 3}))), ShapeError);
  EXPECT_THROW(conv2d(g.input(x), g.input(Tensor<double>({3, 2, 2, 2}))), ShapeError);
}

TEST(GroupNorm, MatchesFormula) {
  Graph<double> g;
  const auto x = Tensor<double>::random({2, 6, 4, 3}, {5, -3, 5});
  const auto gamma = Tensor<double>::random({6}, {6});
  const auto beta = Tensor<double>::random({6}, {7});
  auto y = group_norm(g.input(x), g.input(gamma), g.input(beta), 3, 1e-5).value();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t grp = 0; grp < 3; ++grp) {
      double m = 0, v = 0;
      for (int64_t c = 2 * grp; c < 2 * grp + 2; ++c)
        for (int64_t i = 0; i < 12; ++i) m += x.at(b, c, i / 3, i % 3);
      m /= 24;
      for (int64_t c = 2 * grp; c < 2 * grp + 2; ++c)
        for (int64_t i = 0; i < 12; ++i) v += std::pow(x.at(b, c, i / 3, i % 3) - m, 2);
      v /= 24;
      for (int64_t c = 2 * grp; c < 2 * grp + 2; ++c)
        for (int64_t i = 0; i < 12; ++i) {
          const double want = gamma[static_cast<size_t>(c)] * (x.at(b, c, i / 3, i % 3) - m) / std::sqrt(v + 1e-5) +
                              beta[static_cast<size_t>(c)];
          ASSERT_NEAR(y.at(b, c, i / 3, i % 3), want, 1e-10);
        }
    }
}

TEST(GroupNorm, IndivisibleGroupsIsConfigError) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 6, 2, 2}));
  auto p = g.input(Tensor<double>({6}, 1.0));
  EXPECT_THROW(group_norm(x, p, p, 4), ConfigError);
  EXPECT_EQ(group_count_for(6), 6);
  EXPECT_EQ(group_count_for(16), 8);
  EXPECT_EQ(group_count_for(12), 6);
}

TEST(Activations, SoftmaxSumsToOneAndSigmoidRange) {
  Graph<double> g;
  auto x = g.input(Tensor<double>::random({2, 5, 3, 3}, {9, -20, 20}));
  auto s = softmax_channels(x).value();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t p = 0; p < 9; ++p) {
      double t = 0;
      for (int64_t c = 0; c < 5; ++c) t += s.at(b, c, p / 3, p % 3);
      ASSERT_NEAR(t, 1.0, 1e-12);
    }
  for (double v : sigmoid(x).value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : relu(x).value().data()) EXPECT_GE(v, 0.0);
}

TEST(Upsample, HalfPixelOracle) {
  Graph<double> g;
  const auto x = Tensor<double>::random({1, 2, 3, 4}, {11});
  for (int f : {2, 3}) {
    auto y = upsample_bilinear(g.input(x), f).value();
    ASSERT_EQ(y.shape(), (Shape{1, 2, 3 * f, 4 * f}));
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 3 * f; ++i)
        for (int64_t j = 0; j < 4 * f; ++j) {
          const double sy = std::clamp((i + 0.5) / f - 0.5, 0.0, 2.0);
          const double sx = std::clamp((j + 0.5) / f - 0.5, 0.0, 3.0);
          const auto y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
          const auto y1 = std::min<int64_t>(y0 + 1, 2), x1 = std::min<int64_t>(x0 + 1, 3);
          const double ay = sy - y0, ax = sx - x0;
          const double want = (1 - ay) * ((1 - ax) * x.at(0, c, y0, x0) + ax * x.at(0, c, y0, x1)) +
                              ay * ((1 - ax) * x.at(0, c, y1, x0) + ax * x.at(0, c, y1, x1));
          ASSERT_NEAR(y.at(0, c, i, j), want, 1e-12);
        }
  }
}

TEST(BlockMean, MatchesDirectAverage) {
  Graph<double> g;
  const auto x = Tensor<double>::random({2, 3, 8, 4}, {12});
  auto y = block_mean(g.input(x), 4, 2).value();
  ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 2; ++j) {
          double s = 0;
          for (int u = 0; u < 4; ++u)
            for (int v = 0; v < 2; ++v) s += x.at(b, c, 4 * i + u, 2 * j + v);
          ASSERT_NEAR(y.at(b, c, i, j), s / 8, 1e-12);
        }
  EXPECT_THROW(block_mean(g.input(x), 3, 2), ShapeError);
}

TEST(MaxPool, PicksBlockMaximum) {
  Graph<double> g;
  const auto x = Tensor<double>::random({1, 2, 4, 6}, {13});
  auto y = max_pool2x2(g.input(x)).value();
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t j = 0; j < 3; ++j) {
        const double m = std::max({x.at(0, c, 2 * i, 2 * j), x.at(0, c, 2 * i + 1, 2 * j), x.at(0, c, 2 * i, 2 * j + 1),
                                   x.at(0, c, 2 * i + 1, 2 * j + 1)});
        ASSERT_EQ(y.at(0, c, i, j), m);
      }
}

TEST(Sampler, IdentityGridAndPointOracle) {
  Graph<double> g;
  const auto x = Tensor<double>::random({1, 2, 5, 7}, {14});
  auto grid = standard_grid<double>(5, 7).reshaped({1, 5, 7, 2});
  expect_near_all(sample_bilinear_normalized(g.input(x), g.input(grid)).value(), x, 1e-12);

  const auto coords = Tensor<double>::random({1, 3, 3, 2}, {15, -1, 1});
  auto y = sample_bilinear_normalized(g.input(x), g.input(coords)).value();
  for (int64_t p = 0; p < 9; ++p) {
    const double sy = (coords[static_cast<size_t>(2 * p)] + 1) * 0.5 * 4;
    const double sx = (coords[static_cast<size_t>(2 * p + 1)] + 1) * 0.5 * 6;
    const auto y0 = static_cast<int64_t>(std::floor(sy)), x0 = static_cast<int64_t>(std::floor(sx));
    const auto y1 = std::min<int64_t>(y0 + 1, 4), x1 = std::min<int64_t>(x0 + 1, 6);
    const double ay = sy - y0, ax = sx - x0;
    for (int64_t c = 0; c < 2; ++c) {
      const double want = (1 - ay) * ((1 - ax) * x.at(0, c, y0, x0) + ax * x.at(0, c, y0, x1)) +
                          ay * ((1 - ax) * x.at(0, c, y1, x0) + ax * x.at(0, c, y1, x1));
      ASSERT_NEAR(y.at(0, c, p / 3, p % 3), want, 1e-12);
    }
  }
  Tensor<double> bad({1, 1, 1, 2}, std::vector<double>{0.0, 1.5});
  EXPECT_THROW(sample_bilinear_normalized(g.input(x), g.input(bad)), ContractError);
}

TEST(GradientSuite, EveryOperatorPasses) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcomes = run_gradcheck_suite(1, 1e-4);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GE(outcomes.size(), 25u);
  for (const auto& o : outcomes) EXPECT_TRUE(o.report.passed) << o.name << " max rel err " << o.report.max_rel_err;
  EXPECT_LT(secs, 120.0);
}

TEST(GradientSuite, CoversEveryLayerKind) {
  const auto cases = operator_gradcheck_cases(2);
  for (const std::string want :
       {"conv2d 3x3 dilation 2 stride 2", "group_norm", "relu", "sigmoid", "softmax", "upsample_bilinear", "block_mean",
        "sample_bilinear_normalized", "flow_estimate", "channel_attention", "flow_warp", "bica_fuse",
        "segmentation_loss"}) {
    const bool found = std::any_of(cases.begin(), cases.end(), [&](const GradCheckCase& c) { return c.name.rfind(want, 0) == 0; });
    EXPECT_TRUE(found) << want;
  }
}
