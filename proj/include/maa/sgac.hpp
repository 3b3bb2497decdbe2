#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "maa/geometry.hpp"
#include "maa/nn.hpp"

// Keypoint-anchored patch extraction and the patch discriminator used for the
// appearance consistency constraint.

namespace maa::sgac {

using ad::Var;

struct PatchWindow {
  double x0 = 0.0;  // top-left sample position in pixels
  double y0 = 0.0;
};

// Window of side p centred on a normalized keypoint, shifted to lie inside the image.
inline PatchWindow patch_window(Point2 kp, int p, int h, int w) {
  const double cx = to_pixel(kp.x, w), cy = to_pixel(kp.y, h);
  const double half = (p - 1) / 2.0;
  return {std::clamp(cx - half, 0.0, static_cast<double>(w - p)), std::clamp(cy - half, 0.0, static_cast<double>(h - p))};
}

// img: (N, C, H, W); kp: (N, K, 2) anchors, treated as constants.
// Returns (N*K, C, P, P) bilinear crops, patch n*K + k from keypoint k of image n.
template <typename T>
Var<T> extract_patches(const Var<T>& img, const Tensor<T>& kp, int p) {
  const auto& s = img.shape();
  require(s.size() == 4, "extract_patches: expected NCHW image");
  require(kp.rank() == 3 && kp.dim(0) == s[0] && kp.dim(2) == 2, "extract_patches: keypoints must be (N, K, 2)");
  const int n = s[0], c = s[1], h = s[2], w = s[3], k = kp.dim(1);
  require(p >= 1 && p <= std::min(h, w), "extract_patches: patch size " + std::to_string(p) + " exceeds image side");

  struct Tap {
    int x0, x1, y0, y1;
    T fx, fy;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(n) * k * p * p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const std::size_t o = (static_cast<std::size_t>(i) * k + j) * 2;
      const auto win = patch_window({static_cast<double>(kp[o]), static_cast<double>(kp[o + 1])}, p, h, w);
      for (int v = 0; v < p; ++v)
        for (int u = 0; u < p; ++u) {
          const double sx = win.x0 + u, sy = win.y0 + v;
          const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
          const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
          taps[((static_cast<std::size_t>(i) * k + j) * p + v) * p + u] = {
              x0, std::min(x0 + 1, w - 1), y0, std::min(y0 + 1, h - 1), static_cast<T>(sx - x0), static_cast<T>(sy - y0)};
        }
    }

  const std::size_t hw = static_cast<std::size_t>(h) * w, pp = static_cast<std::size_t>(p) * p;
  Tensor<T> out({n * k, c, p, p});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      for (int ch = 0; ch < c; ++ch) {
        const T* src = img.value().data() + (static_cast<std::size_t>(i) * c + ch) * hw;
        T* dst = out.data() + ((static_cast<std::size_t>(i) * k + j) * c + ch) * pp;
        const Tap* t = &taps[(static_cast<std::size_t>(i) * k + j) * pp];
        for (std::size_t q = 0; q < pp; ++q)
          dst[q] = (src[t[q].y0 * w + t[q].x0] * (1 - t[q].fx) + src[t[q].y0 * w + t[q].x1] * t[q].fx) * (1 - t[q].fy) +
                   (src[t[q].y1 * w + t[q].x0] * (1 - t[q].fx) + src[t[q].y1 * w + t[q].x1] * t[q].fx) * t[q].fy;
      }
  return ad::make_op<T>(std::move(out), {img}, [n, k, c, hw, pp, w, taps](ad::Node<T>& self) {
    auto* g = ad::grad_of(self, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j)
        for (int ch = 0; ch < c; ++ch) {
          T* dst = g->data() + (static_cast<std::size_t>(i) * c + ch) * hw;
          const T* go = self.grad.data() + ((static_cast<std::size_t>(i) * k + j) * c + ch) * pp;
          const Tap* t = &taps[(static_cast<std::size_t>(i) * k + j) * pp];
          for (std::size_t q = 0; q < pp; ++q) {
            const T v = go[q];
            dst[t[q].y0 * w + t[q].x0] += v * (1 - t[q].fx) * (1 - t[q].fy);
            dst[t[q].y0 * w + t[q].x1] += v * t[q].fx * (1 - t[q].fy);
            dst[t[q].y1 * w + t[q].x0] += v * (1 - t[q].fx) * t[q].fy;
            dst[t[q].y1 * w + t[q].x1] += v * t[q].fx * t[q].fy;
          }
        }
  });
}

// Shared-weight convolutional classifier: one realness logit per patch.
template <typename T>
class Discriminator {
 public:
  Discriminator(int patch_size, std::uint64_t seed, int channels = 16) : patch_(patch_size) {
    require(patch_size >= 4, "discriminator: patch size must be at least 4");
    nn::Rng rng(seed);
    int in = 3, side = patch_size;
    for (int l = 0; l < 3 && side >= 4 && side % 2 == 0; ++l) {
      const int out = channels << l;
      blocks_.emplace_back(params_, "disc.block" + std::to_string(l), in, out, rng);
      in = out;
      side /= 2;
    }
    features_ = in * side * side;
    head_ = nn::Linear<T>(params_, "disc.head", features_, 1, rng);
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  int patch_size() const { return patch_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  // patches: (B, 3, P, P) -> logits (B, 1)
  Var<T> operator()(const Var<T>& patches) const {
    require_shape(patches.shape(), {patches.dim(0), 3, patch_, patch_}, "discriminator input");
    Var<T> y = patches;
    for (const auto& b : blocks_) y = b(y);
    return head_(ad::reshape(y, {patches.dim(0), features_}));
  }

 private:
  int patch_;
  int features_ = 0;
  nn::ParameterSet<T> params_;
  std::vector<nn::DownBlock<T>> blocks_;
  nn::Linear<T> head_;
};

template <typename T>
struct AppearanceLosses {
  Var<T> discriminator;  // L_D, gradients reach D only
  Var<T> generator;      // L_G, gradients reach the synthesized image (and D)
};

// L_D = -mean[log s(D(real)) + log(1 - s(D(fake)))], L_G = -mean[log s(D(fake))].
// Real patches come from the source image at its keypoints, fake patches from
// the synthesized image at its own keypoints.
template <typename T>
AppearanceLosses<T> appearance_losses(const Discriminator<T>& d, const Var<T>& src, const Var<T>& synth,
                                      const Tensor<T>& src_kp, const Tensor<T>& synth_kp) {
  require_shape(synth.shape(), src.shape(), "appearance_losses images");
  const Var<T> real = extract_patches(src.detach(), src_kp, d.patch_size());
  const Var<T> fake = extract_patches(synth, synth_kp, d.patch_size());
  AppearanceLosses<T> out;
  out.discriminator = ad::add(ad::bce_with_logits(d(real), T(1)), ad::bce_with_logits(d(fake.detach()), T(0)));
  out.generator = ad::bce_with_logits(d(fake), T(1));
  return out;
}

// Generator-side term only, against the current discriminator.
template <typename T>
Var<T> generator_loss(const Discriminator<T>& d, const Var<T>& synth, const Tensor<T>& synth_kp) {
  return ad::bce_with_logits(d(extract_patches(synth, synth_kp, d.patch_size())), T(1));
}

}  // namespace maa::sgac
