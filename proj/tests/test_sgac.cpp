#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "maa/gradcheck.hpp"
#include "maa/sgac.hpp"

using namespace maa;
using maa::ad::Var;
using maa::testing::check_gradients;
using maa::testing::random_tensor;

namespace {

Tensor<double> kp_tensor(std::vector<std::vector<Point2>> sets) {
  std::vector<KeypointSet> ks;
  for (auto& s : sets) ks.push_back(KeypointSet{std::move(s), {}});
  return to_tensor<double>(ks);
}

// Naive bilinear lookup at pixel position (x, y), clamping neighbours to the border.
double bilinear(const Tensor<double>& img, int n, int c, double x, double y) {
  const int h = img.dim(2), w = img.dim(3);
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1), y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(n, c, y0, x0) + fx * img.at(n, c, y0, x1)) +
         fy * ((1 - fx) * img.at(n, c, y1, x0) + fx * img.at(n, c, y1, x1));
}

}  // namespace

TEST(Patches, CenterKeypointGivesCentralWindow) {
  std::mt19937_64 rng(1);
  const auto img = random_tensor({1, 3, 64, 64}, rng, 0, 1);
  const auto p = sgac::extract_patches(Var<double>::constant(img), kp_tensor({{{0.0, 0.0}}}), 16).value();
  ASSERT_EQ(p.shape(), (std::vector<int>{1, 3, 16, 16}));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) EXPECT_EQ(p.at(0, c, y, x), img.at(0, c, 24 + y, 24 + x));
}

TEST(Patches, CornerKeypointsClampToBorderBlocks) {
  std::mt19937_64 rng(2);
  const auto img = random_tensor({1, 3, 32, 40}, rng, 0, 1);
  const auto p =
      sgac::extract_patches(Var<double>::constant(img), kp_tensor({{{-1.0, -1.0}, {1.0, 1.0}, {-3.0, 2.0}}}), 8).value();
  ASSERT_EQ(p.dim(0), 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        EXPECT_EQ(p.at(0, c, y, x), img.at(0, c, y, x));
        EXPECT_EQ(p.at(1, c, y, x), img.at(0, c, 24 + y, 32 + x));
        EXPECT_EQ(p.at(2, c, y, x), img.at(0, c, 24 + y, x));
      }
}

TEST(Patches, FractionalCentersMatchNaiveInterpolation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  const int n = 2, k = 5, p = 7, h = 20, w = 24;
  const auto img = random_tensor({n, 3, h, w}, rng);
  std::vector<std::vector<Point2>> sets(n);
  for (auto& s : sets)
    for (int j = 0; j < k; ++j) s.push_back({u(rng), u(rng)});
  const auto out = sgac::extract_patches(Var<double>::constant(img), kp_tensor(sets), p).value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const double cx = (sets[i][j].x + 1) / 2 * (w - 1), cy = (sets[i][j].y + 1) / 2 * (h - 1);
      const double x0 = std::clamp(cx - (p - 1) / 2.0, 0.0, double(w - p));
      const double y0 = std::clamp(cy - (p - 1) / 2.0, 0.0, double(h - p));
      for (int c = 0; c < 3; ++c)
        for (int v = 0; v < p; ++v)
          for (int q = 0; q < p; ++q)
            EXPECT_NEAR(out.at(i * k + j, c, v, q), bilinear(img, i, c, x0 + q, y0 + v), 1e-6);
    }
}

TEST(Patches, LinearInTheImage) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor({1, 3, 16, 16}, rng), b = random_tensor({1, 3, 16, 16}, rng);
  const auto kp = kp_tensor({{{0.13, -0.4}, {0.9, 0.77}, {-0.31, 0.05}}});
  Tensor<double> mix({1, 3, 16, 16});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.5 * a[i] - 0.75 * b[i];
  const auto pa = sgac::extract_patches(Var<double>::constant(a), kp, 5).value();
  const auto pb = sgac::extract_patches(Var<double>::constant(b), kp, 5).value();
  const auto pm = sgac::extract_patches(Var<double>::constant(mix), kp, 5).value();
  for (std::size_t i = 0; i < pm.size(); ++i) EXPECT_NEAR(pm[i], 2.5 * pa[i] - 0.75 * pb[i], 1e-12);
}

TEST(Patches, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto img = Var<double>::leaf(random_tensor({2, 3, 12, 12}, rng));
  const auto kp = kp_tensor({{{0.21, -0.33}, {-0.8, 0.6}}, {{0.05, 0.44}, {0.97, -0.99}}});
  const auto r = random_tensor({4, 3, 5, 5}, rng);
  const auto res = check_gradients([&] { return maa::testing::project(sgac::extract_patches(img, kp, 5), r); }, {img});
  EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(Patches, RejectsOversizedPatch) {
  const Var<double> img = Var<double>::constant(Tensor<double>({1, 3, 8, 8}));
  EXPECT_THROW(sgac::extract_patches(img, kp_tensor({{{0, 0}}}), 9), InputError);
}

TEST(Discriminator, SharedWeightsAndShapes) {
  sgac::Discriminator<double> d(16, 9);
  std::mt19937_64 rng(6);
  auto one = random_tensor({1, 3, 16, 16}, rng);
  Tensor<double> three({3, 3, 16, 16});
  for (int i = 0; i < 3; ++i) std::copy(one.vec().begin(), one.vec().end(), three.data() + i * one.size());
  const auto logits = d(Var<double>::constant(three)).value();
  ASSERT_EQ(logits.shape(), (std::vector<int>{3, 1}));
  EXPECT_EQ(logits[0], logits[1]);
  EXPECT_EQ(logits[1], logits[2]);
  EXPECT_TRUE(std::isfinite(logits[0]));
  EXPECT_THROW(d(Var<double>::constant(Tensor<double>({1, 3, 8, 8}))), InputError);
}

namespace {

void zero_params(sgac::Discriminator<double>& d) {
  for (const auto& [name, v] : d.params().items()) const_cast<Var<double>&>(v).mutable_value().fill(0.0);
}

}  // namespace

TEST(AppearanceLosses, ZeroLogitsGiveLogTwoValues) {
  sgac::Discriminator<double> d(8, 3);
  zero_params(d);
  std::mt19937_64 rng(7);
  const auto src = Var<double>::constant(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  const auto syn = Var<double>::constant(random_tensor({2, 3, 16, 16}, rng, 0, 1));
  const auto kp = kp_tensor({{{0, 0}, {0.5, 0.5}}, {{-0.5, 0.1}, {0.3, -0.9}}});
  const auto l = sgac::appearance_losses(d, src, syn, kp, kp);
  EXPECT_NEAR(l.discriminator.item(), 2 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(l.generator.item(), std::numbers::ln2, 1e-12);
}

TEST(AppearanceLosses, ConfidentLogitsDriveDiscriminatorLossToZero) {
  double prev = 10;
  for (double m : {1.0, 5.0, 20.0, 80.0, 700.0}) {
    const auto real = Var<double>::constant(Tensor<double>({4, 1}, m));
    const auto fake = Var<double>::constant(Tensor<double>({4, 1}, -m));
    const double ld = ad::add(ad::bce_with_logits(real, 1.0), ad::bce_with_logits(fake, 0.0)).item();
    EXPECT_TRUE(std::isfinite(ld));
    EXPECT_LT(ld, prev);
    prev = ld;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(AppearanceLosses, GeneratorGradientReachesSynthOnly) {
  sgac::Discriminator<double> d(4, 11, 2);
  std::mt19937_64 rng(8);
  auto src = Var<double>::leaf(random_tensor({1, 3, 8, 8}, rng, 0, 1));
  auto syn = Var<double>::leaf(random_tensor({1, 3, 8, 8}, rng, 0, 1));
  const auto kp = kp_tensor({{{0.3, -0.2}, {-0.61, 0.47}}});
  const auto res = check_gradients([&] { return sgac::appearance_losses(d, src, syn, kp, kp).generator; }, {syn});
  EXPECT_LE(res.max_rel_error, 1e-3) << res.worst;
  src.zero_grad();
  syn.zero_grad();
  const auto l = sgac::appearance_losses(d, src, syn, kp, kp);
  ad::backward(ad::add(l.discriminator, l.generator));
  const auto gs = src.grad(), gy = syn.grad();
  for (double x : gs.vec()) EXPECT_EQ(x, 0.0);
  // L_D sees detached fakes, so synth gradients come from L_G alone.
  syn.zero_grad();
  ad::backward(sgac::appearance_losses(d, src, syn, kp, kp).discriminator);
  const auto gd = syn.grad();
  for (double x : gd.vec()) EXPECT_EQ(x, 0.0);
  double norm = 0;
  for (double x : gy.vec()) norm += x * x;
  EXPECT_GT(norm, 0.0);
}

TEST(AppearanceLosses, InvariantToKeypointPermutation) {
  sgac::Discriminator<double> d(6, 12);
  std::mt19937_64 rng(9);
  const auto src = Var<double>::constant(random_tensor({1, 3, 16, 16}, rng, 0, 1));
  const auto syn = Var<double>::constant(random_tensor({1, 3, 16, 16}, rng, 0, 1));
  const auto a = kp_tensor({{{0.1, 0.2}, {-0.7, 0.4}, {0.5, -0.5}}});
  const auto b = kp_tensor({{{0.5, -0.5}, {0.1, 0.2}, {-0.7, 0.4}}});
  const auto la = sgac::appearance_losses(d, src, syn, a, a), lb = sgac::appearance_losses(d, src, syn, b, b);
  EXPECT_NEAR(la.discriminator.item(), lb.discriminator.item(), 1e-12);
  EXPECT_NEAR(la.generator.item(), lb.generator.item(), 1e-12);
}
