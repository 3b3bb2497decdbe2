#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maa/gradcheck.hpp"
#include "maa/ops.hpp"

using maa::Tensor;
using maa::ad::Var;
using maa::testing::check_gradients;
using maa::testing::project;
using maa::testing::random_tensor;
namespace ad = maa::ad;

namespace {

constexpr double kTol = 1e-6;

struct OpsGrad : ::testing::Test {
  std::mt19937_64 rng{1234};
  Var<double> leaf(std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return Var<double>::leaf(random_tensor(std::move(shape), rng, lo, hi));
  }
  Tensor<double> proj_for(const Var<double>& y) { return random_tensor(y.shape(), rng); }
};

TEST_F(OpsGrad, Conv2dAllInputs) {
  for (int k : {1, 3}) {
    auto x = leaf({2, 3, 5, 4});
    auto w = leaf({4, 3, k, k});
    auto b = leaf({4});
    auto r = proj_for(ad::conv2d(x, w, b));
    auto res = check_gradients([&] { return project(ad::conv2d(x, w, b), r); }, {x, w, b});
    EXPECT_LT(res.max_rel_error, kTol) << res.worst;
  }
}

TEST_F(OpsGrad, Conv2dMatchesDirectSum) {
  auto x = leaf({1, 2, 4, 5});
  auto w = leaf({3, 2, 3, 3});
  auto b = leaf({3});
  const auto y = ad::conv2d(x, w, b).value();
  for (int co = 0; co < 3; ++co)
    for (int yy = 0; yy < 4; ++yy)
      for (int xx = 0; xx < 5; ++xx) {
        double acc = b.value()[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) continue;
              acc += w.value()[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.value().at(0, ci, sy, sx);
            }
        EXPECT_NEAR(y.at(0, co, yy, xx), acc, 1e-12);
      }
}

TEST_F(OpsGrad, LinearAndElementwise) {
  auto x = leaf({3, 5});
  auto w = leaf({2, 5});
  auto b = leaf({2});
  auto r = proj_for(ad::linear(x, w, b));
  auto res = check_gradients([&] { return project(ad::linear(x, w, b), r); }, {x, w, b});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;

  auto a = leaf({2, 3, 2, 2});
  auto c = leaf({2, 3, 2, 2});
  auto r2 = proj_for(a);
  auto f = [&] {
    auto y = ad::add(ad::mul(ad::sigmoid(a), ad::leaky_relu(c)), ad::sub(ad::scale(a, 0.3), c));
    return ad::add(project(y, r2), ad::mean_abs_diff(a, c));
  };
  res = check_gradients(f, {a, c});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, Resampling) {
  auto x = leaf({2, 2, 4, 6});
  auto r1 = proj_for(ad::avg_pool2(x));
  auto r2 = proj_for(ad::upsample_nearest2(x));
  auto r3 = proj_for(ad::resize_bilinear(x, 7, 3));
  auto f = [&] {
    return ad::add(ad::add(project(ad::avg_pool2(x), r1), project(ad::upsample_nearest2(x), r2)),
                   project(ad::resize_bilinear(x, 7, 3), r3));
  };
  auto res = check_gradients(f, {x});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, ResizeBilinearIdentityAndCorners) {
  auto x = leaf({1, 1, 4, 4});
  EXPECT_EQ(ad::resize_bilinear(x, 4, 4).value(), x.value());
  auto y = ad::resize_bilinear(x, 7, 7).value();
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), x.value().at(0, 0, 0, 0));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 6, 6), x.value().at(0, 0, 3, 3));
}

TEST_F(OpsGrad, LayoutOps) {
  auto a = leaf({2, 1, 3, 3});
  auto b = leaf({2, 2, 3, 3});
  auto m = leaf({2, 1, 3, 3});
  auto r = proj_for(ad::concat_channels<double>({a, b}));
  auto nhwc = leaf({2, 3, 3, 2});
  auto r2 = proj_for(ad::channels_first(nhwc));
  auto r3 = proj_for(ad::channels_last(b));
  auto r4 = proj_for(b);
  auto f = [&] {
    auto y = project(ad::concat_channels<double>({a, b}), r);
    y = ad::add(y, project(ad::channels_first(nhwc), r2));
    y = ad::add(y, project(ad::channels_last(b), r3));
    return ad::add(y, project(ad::mul_channel_broadcast(b, m), r4));
  };
  auto res = check_gradients(f, {a, b, m, nhwc});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
  EXPECT_EQ(ad::channels_first(ad::channels_last(b)).value(), b.value());
}

TEST_F(OpsGrad, SoftmaxFamily) {
  auto x = leaf({2, 3, 4, 4}, -2, 2);
  auto maps = leaf({2, 3 * 4, 4, 4});
  auto r1 = random_tensor({2, 3, 2}, rng);
  auto r2 = random_tensor({2, 3, 4}, rng);
  auto r3 = proj_for(x);
  auto f = [&] {
    auto p = ad::softmax_spatial(x, 0.5);
    auto y = ad::add(project(ad::soft_argmax(p), r1), project(ad::weighted_spatial_sum(p, maps, 4), r2));
    return ad::add(y, project(ad::softmax_channels(x), r3));
  };
  auto res = check_gradients(f, {x, maps});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, SoftArgmaxOfDeltaPeak) {
  Tensor<double> logits({1, 1, 16, 16}, -1e3);
  logits.at(0, 0, 5, 11) = 0.0;
  auto kp = ad::soft_argmax(ad::softmax_spatial(Var<double>::constant(logits), 0.1)).value();
  EXPECT_NEAR(kp[0], -1.0 + 2.0 * 11 / 15, 1e-12);
  EXPECT_NEAR(kp[1], -1.0 + 2.0 * 5 / 15, 1e-12);
  // Shifting the peak by two pixels shifts the keypoint by exactly two grid steps.
  logits.at(0, 0, 5, 11) = -1e3;
  logits.at(0, 0, 7, 13) = 0.0;
  auto kp2 = ad::soft_argmax(ad::softmax_spatial(Var<double>::constant(logits), 0.1)).value();
  EXPECT_NEAR(kp2[0] - kp[0], 4.0 / 15, 1e-12);
  EXPECT_NEAR(kp2[1] - kp[1], 4.0 / 15, 1e-12);
}

TEST_F(OpsGrad, GaussianHeatmaps) {
  auto kp = leaf({2, 3, 2}, -0.8, 0.8);
  auto r = random_tensor({2, 3, 6, 5}, rng);
  auto res = check_gradients([&] { return project(ad::gaussian_heatmaps(kp, 6, 5, 0.3), r); }, {kp});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, SparseMotionGradients) {
  auto ps = leaf({2, 3, 2}, -0.8, 0.8);
  auto pd = leaf({2, 3, 2}, -0.8, 0.8);
  Tensor<double> eye({2, 3, 4});
  for (int i = 0; i < 6; ++i) eye[i * 4] = eye[i * 4 + 3] = 1.0;
  auto js = Var<double>::leaf(eye);
  auto jd = Var<double>::leaf(eye);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (auto& v : js.mutable_value().vec()) v += jitter(rng);
  for (auto& v : jd.mutable_value().vec()) v += jitter(rng);
  auto r = random_tensor({2, 4, 5, 4, 2}, rng);
  auto res = check_gradients([&] { return project(ad::sparse_motion(ps, js, pd, jd, 5, 4), r); }, {ps, js, pd, jd});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, SparseMotionClampedInverse) {
  Tensor<double> zero({1, 1, 4});
  Tensor<double> eye({1, 1, 4});
  eye[0] = eye[3] = 1.0;
  ad::MotionDiagnostics diag;
  auto out = ad::sparse_motion(Var<double>::constant(Tensor<double>({1, 1, 2})), Var<double>::constant(eye),
                               Var<double>::constant(Tensor<double>({1, 1, 2})), Var<double>::constant(zero), 3, 3,
                               1e-6, &diag);
  EXPECT_EQ(diag.clamped_jacobians, 1);
  EXPECT_TRUE(out.value().all_finite());
}

TEST_F(OpsGrad, SparseMotionMatchesPerPixelFormula) {
  auto ps = random_tensor({1, 2, 2}, rng, -0.8, 0.8);
  auto pd = random_tensor({1, 2, 2}, rng, -0.8, 0.8);
  auto js = random_tensor({1, 2, 4}, rng, 0.5, 1.5);
  auto jd = random_tensor({1, 2, 4}, rng, 0.5, 1.5);
  jd[1] = jd[2] = jd[5] = jd[6] = 0.1;
  const int h = 6, w = 7;
  auto out = ad::sparse_motion(Var<double>::constant(ps), Var<double>::constant(js), Var<double>::constant(pd),
                               Var<double>::constant(jd), h, w)
                 .value();
  for (int k = 0; k < 2; ++k) {
    const double* S = &js[k * 4];
    const double* D = &jd[k * 4];
    const double det = D[0] * D[3] - D[1] * D[2];
    const double inv[4] = {D[3] / det, -D[1] / det, -D[2] / det, D[0] / det};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double zx = -1 + 2.0 * x / (w - 1) - pd[k * 2], zy = -1 + 2.0 * y / (h - 1) - pd[k * 2 + 1];
        const double tx = inv[0] * zx + inv[1] * zy, ty = inv[2] * zx + inv[3] * zy;
        const double fx = ps[k * 2] + S[0] * tx + S[1] * ty, fy = ps[k * 2 + 1] + S[2] * tx + S[3] * ty;
        const std::size_t o = ((static_cast<std::size_t>(k + 1) * h + y) * w + x) * 2;
        EXPECT_NEAR(out[o], fx, 1e-12);
        EXPECT_NEAR(out[o + 1], fy, 1e-12);
      }
  }
}

TEST_F(OpsGrad, GridSampleAndCombineFlow) {
  auto x = leaf({2, 2, 5, 6});
  auto grid = leaf({4, 3, 4, 2}, -0.9, 0.9);
  auto r = random_tensor({4, 2, 3, 4}, rng);
  auto res = check_gradients([&] { return project(ad::grid_sample(x, grid, 2), r); }, {x, grid});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;

  auto mask = leaf({2, 3, 4, 5});
  auto grids = leaf({2, 3, 4, 5, 2});
  auto r2 = random_tensor({2, 4, 5, 2}, rng);
  res = check_gradients([&] { return project(ad::combine_flow(mask, grids), r2); }, {mask, grids});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
}

TEST_F(OpsGrad, GridSampleIdentityGridReproducesInput) {
  auto x = leaf({1, 3, 5, 7});
  Tensor<double> grid({1, 5, 7, 2});
  for (int y = 0; y < 5; ++y)
    for (int xx = 0; xx < 7; ++xx) {
      grid[(y * 7 + xx) * 2] = ad::grid_coord<double>(xx, 7);
      grid[(y * 7 + xx) * 2 + 1] = ad::grid_coord<double>(y, 5);
    }
  auto out = ad::grid_sample(x, Var<double>::constant(grid)).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], x.value()[i], 1e-12);
}

TEST_F(OpsGrad, BceWithLogits) {
  auto z = leaf({3, 1}, -3, 3);
  auto res = check_gradients([&] { return ad::add(ad::bce_with_logits(z, 1.0), ad::bce_with_logits(z, 0.0)); }, {z});
  EXPECT_LT(res.max_rel_error, kTol) << res.worst;
  auto zero = Var<double>::constant(Tensor<double>({4, 1}));
  EXPECT_NEAR(ad::bce_with_logits(zero, 1.0).item(), std::log(2.0), 1e-15);
  auto huge = Var<double>::constant(Tensor<double>({1, 1}, 800.0));
  EXPECT_NEAR(ad::bce_with_logits(huge, 1.0).item(), 0.0, 1e-300);
  EXPECT_NEAR(ad::bce_with_logits(huge, 0.0).item(), 800.0, 1e-9);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  auto x = Var<double>::leaf(Tensor<double>({1}, 3.0));
  auto y = ad::mul(x, x);
  ad::backward(ad::add(y, y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, ConstantsGetNoTape) {
  auto c = Var<double>::constant(Tensor<double>({2}, 1.0));
  auto y = ad::scale(c, 2.0);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autodiff, NonScalarRootNeedsSeed) {
  auto x = Var<double>::leaf(Tensor<double>({2}, 1.0));
  EXPECT_THROW(ad::backward(ad::scale(x, 2.0)), maa::InputError);
}

}  // namespace

TEST(GradCheck, SkipsCoordinatesAtKinksOnly) {
  Tensor<double> v({3});
  v[0] = 0.0;  // on the kink
  v[1] = 0.5;
  v[2] = -0.5;
  auto x = Var<double>::leaf(v);
  auto loss = [&] { return ad::sum_all(ad::leaky_relu(x, 0.2)); };
  const auto plain = check_gradients(loss, {x});
  EXPECT_GT(plain.max_rel_error, 0.1);
  const auto aware = check_gradients(loss, {x}, 1e-5, 1e-4, 1, 1e-4);
  EXPECT_EQ(aware.skipped, 1u);
  EXPECT_EQ(aware.checked, 2u);
  EXPECT_LE(aware.max_rel_error, 1e-8);
}

TEST(Float, FlushDenormalsZeroesSubnormals) {
  volatile float tiny = 1e-30f;
  EXPECT_GT(tiny * 1e-10f, 0.0f);
  maa::flush_denormals();
  EXPECT_EQ(tiny * 1e-10f, 0.0f);
  EXPECT_GT(tiny * 1e-5f, 0.0f);
}
