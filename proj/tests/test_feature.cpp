#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nightiq/feature.hpp"
#include "support/oracles.hpp"

using namespace nightiq;

namespace {

Tensor checkerboard(Shape s, double lo, double hi) {
  Tensor t(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) t.at(n, c, y, x) = (x + y) % 2 ? hi : lo;
  return t;
}

double kernel_sum(const ColorLossParams& p) {
  double s = 0;
  for (double v : color_kernel(p)) s += v;
  return s;
}

}  // namespace

TEST(Ssim, MatchesWindowedOracle) {
  std::mt19937_64 rng(21);
  const Tensor a = oracle::random_tensor(Shape{2, 3, 16, 13}, rng);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  Tensor b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + jitter(rng), 0.0, 1.0);
  EXPECT_NEAR(ssim(a, b), oracle::ssim_naive(a, b), 1e-12);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_EQ(ssim(Tensor(Shape{1, 3, 12, 12}, 0.5), Tensor(Shape{1, 3, 12, 12}, 0.5)), 1.0);
  EXPECT_THROW(ssim(Tensor(Shape{1, 1, 8, 8}), Tensor(Shape{1, 1, 8, 8})), std::invalid_argument);
}

TEST(StructureLoss, Examples) {
  std::mt19937_64 rng(5);
  const Tensor r = oracle::random_tensor(Shape{1, 3, 32, 32}, rng);
  const Tensor noise = oracle::random_tensor(Shape{1, 3, 32, 32}, rng);
  EXPECT_EQ(loss_structure(r, r), 0.0);
  EXPECT_NEAR(loss_structure(r, noise), 1.0, 0.1);
  double previous = 2.0;
  for (double t : {0.0, 0.5, 1.0}) {
    Tensor blend(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i) blend[i] = (1 - t) * noise[i] + t * r[i];
    const double v = loss_structure(r, blend);
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(ColorKernel, Values) {
  const ColorLossParams p;
  const auto k = color_kernel(p);
  ASSERT_EQ(k.size(), 21u * 21u);
  EXPECT_DOUBLE_EQ(k[10 * 21 + 10], 0.053);
  for (double v : k) {
    EXPECT_GT(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
  // 0.053 * (sum_d exp(-d^2 / 6))^2 over d in [-10, 10].
  double s1 = 0;
  for (int d = -10; d <= 10; ++d) s1 += std::exp(-d * d / 6.0);
  EXPECT_NEAR(kernel_sum(p), 0.053 * s1 * s1, 1e-12);
  EXPECT_NEAR(kernel_sum(p), 1.0, 0.01);
}

TEST(ColorBlur, MatchesDenseOracle) {
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor(Shape{2, 3, 9, 14}, rng);
  const ColorLossParams p;
  const Tensor got = gaussian_blur(x, p);
  const Tensor want = oracle::filter_dense_replicate(x, color_kernel(p), 21);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(ColorBlur, ConstantAndImpulse) {
  const ColorLossParams p;
  const Tensor flat = gaussian_blur(Tensor(Shape{1, 1, 5, 5}, 0.4), p);
  for (double v : flat.values()) EXPECT_NEAR(v, 0.4 * kernel_sum(p), 1e-12);

  Tensor impulse(Shape{1, 1, 31, 31}, 0.0);
  impulse.at(0, 0, 15, 15) = 1.0;
  const Tensor out = gaussian_blur(impulse, p);
  const auto k = color_kernel(p);
  for (int dy = -10; dy <= 10; ++dy)
    for (int dx = -10; dx <= 10; ++dx)
      EXPECT_NEAR(out.at(0, 0, 15 + dy, 15 + dx), k[(dy + 10) * 21 + (dx + 10)], 1e-15);
}

TEST(ColorLoss, Examples) {
  const ColorLossParams p;
  std::mt19937_64 rng(2);
  const Tensor r = oracle::random_tensor(Shape{1, 3, 16, 16}, rng);
  EXPECT_EQ(loss_color(r, r, p), 0.0);
  const double ks = kernel_sum(p);
  EXPECT_NEAR(loss_color(Tensor(Shape{1, 3, 8, 8}, 0.0), Tensor(Shape{1, 3, 8, 8}, 1.0), p), ks * ks,
              1e-12);

  Tensor shifted = r;
  const Tensor checker = checkerboard(r.shape(), -0.1, 0.1);
  for (std::size_t i = 0; i < r.size(); ++i) shifted[i] += checker[i];
  const double plain_mse = loss_mse(r, shifted);
  EXPECT_NEAR(plain_mse, 0.01, 1e-12);
  EXPECT_LT(loss_color(r, shifted, p), 0.01 * plain_mse);
}

TEST(MseLoss, Examples) {
  std::mt19937_64 rng(3);
  const Tensor l = oracle::random_tensor(Shape{1, 1, 4, 4}, rng);
  EXPECT_EQ(loss_mse(l, l), 0.0);
  EXPECT_EQ(loss_mse(Tensor(Shape{1, 1, 4, 4}, 0.0), Tensor(Shape{1, 1, 4, 4}, 1.0)), 1.0);
  EXPECT_THROW(loss_mse(l, Tensor(Shape{1, 1, 4, 5})), std::invalid_argument);
}

TEST(FeatureLoss, PerfectReconstructionIsZero) {
  std::mt19937_64 rng(4);
  const Tensor r = oracle::random_tensor(Shape{2, 3, 16, 16}, rng);
  const Tensor l = oracle::random_tensor(Shape{2, 1, 16, 16}, rng);
  EXPECT_EQ(feature_loss(r, r, l, l, {}), 0.0);
  const Tensor r2 = oracle::random_tensor(Shape{2, 3, 16, 16}, rng);
  const Tensor l2 = oracle::random_tensor(Shape{2, 1, 16, 16}, rng);
  EXPECT_NEAR(feature_loss(r, r2, l, l2, {}),
              loss_structure(r, r2) + loss_color(r, r2, {}) + loss_mse(l, l2), 1e-12);
}

TEST(FeatureLoss, NonNegativeOnRandomInputs) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor r = oracle::random_tensor(Shape{1, 3, 12, 12}, rng);
    const Tensor r2 = oracle::random_tensor(Shape{1, 3, 12, 12}, rng);
    const Tensor l = oracle::random_tensor(Shape{1, 1, 12, 12}, rng);
    const Tensor l2 = oracle::random_tensor(Shape{1, 1, 12, 12}, rng);
    EXPECT_GE(loss_structure(r, r2), 0.0);
    EXPECT_GE(loss_color(r, r2, {}), 0.0);
    EXPECT_GE(loss_mse(l, l2), 0.0);
  }
}

TEST(Encoder, PyramidShapes) {
  ParameterStore store;
  Rng rng(1);
  FeatureEncoder enc(store, "encoder_r", 3, rng);
  FeatureDecoder dec(store, "decoder_r", 3, rng);
  std::mt19937_64 data(2);
  const ag::Var x = ag::Var::constant(oracle::random_tensor(Shape{2, 3, 32, 24}, data));
  const auto p = enc.encode(x, ag::NormMode::kEval);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(p.levels[i].shape(), (Shape{2, kPyramidWidths[i], 32 >> i, 24 >> i}));
  }
  const ag::Var rec = dec.decode(p.levels[3], ag::NormMode::kEval);
  EXPECT_EQ(rec.shape(), (Shape{2, 3, 32, 24}));
  EXPECT_GT(rec.value().min(), 0.0);
  EXPECT_LT(rec.value().max(), 1.0);
}

TEST(Encoder, ZeroInputGivesZeroPyramid) {
  ParameterStore store;
  Rng rng(1);
  FeatureEncoder enc(store, "encoder_l", 1, rng);
  const auto p = enc.encode(ag::Var::constant(Tensor(Shape{1, 1, 16, 16}, 0.0)), ag::NormMode::kEval);
  for (const auto& level : p.levels) {
    EXPECT_EQ(level.value().min(), 0.0);
    EXPECT_EQ(level.value().max(), 0.0);
  }
}
