#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "maa/nn.hpp"

// Keypoint-driven motion transfer model: unsupervised keypoint detector with
// local affine jacobians, sparse-to-dense motion network, and an
// encoder/decoder generator that warps source features.

namespace maa {

struct ModelConfig {
  int image_size = 64;
  int num_kp = 10;

  int detector_downsample = 1;  // number of 2x poolings before the detector hourglass
  int detector_channels = 16;
  int detector_blocks = 3;
  int detector_max_channels = 64;
  double temperature = 0.1;

  int motion_downsample = 1;
  int motion_channels = 16;
  int motion_blocks = 3;
  int motion_max_channels = 64;
  double heatmap_sigma = 0.1;

  int generator_channels = 16;
  int generator_res_blocks = 2;

  int perceptual_channels = 8;
  int perceptual_levels = 3;
  int pyramid_scales = 3;
  std::uint64_t perceptual_seed = 7;

  int detector_size() const { return image_size >> detector_downsample; }
  int heatmap_size() const { return detector_size() / 2; }
  int motion_size() const { return image_size >> motion_downsample; }

  void validate() const {
    require(image_size >= 8 && num_kp >= 1, "model config: image_size >= 8 and num_kp >= 1 required");
    auto divisible = [](int size, int levels) { return size > 0 && size % (1 << levels) == 0; };
    require(divisible(image_size, detector_downsample) && divisible(detector_size(), std::max(detector_blocks, 1)),
            "model config: detector resolution not divisible by its pooling depth");
    require(divisible(image_size, motion_downsample) && divisible(motion_size(), motion_blocks),
            "model config: motion resolution not divisible by its pooling depth");
    require(divisible(image_size, std::max(2, perceptual_levels - 1)) && divisible(image_size, pyramid_scales - 1),
            "model config: image size not divisible by the loss pyramid depth");
    require(temperature > 0 && heatmap_sigma > 0, "model config: temperature and heatmap_sigma must be positive");
    require(detector_blocks >= 1 && motion_blocks >= 1 && generator_channels >= 1 && perceptual_levels >= 1 &&
                pyramid_scales >= 1,
            "model config: block counts must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, image_size, num_kp, detector_downsample,
                                                detector_channels, detector_blocks, detector_max_channels, temperature,
                                                motion_downsample, motion_channels, motion_blocks,
                                                motion_max_channels, heatmap_sigma, generator_channels,
                                                generator_res_blocks, perceptual_channels, perceptual_levels,
                                                pyramid_scales, perceptual_seed)

// 16x16 images and shallow networks, for finite-difference checks.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.image_size = 16;
  c.num_kp = 3;
  c.detector_downsample = 0;
  c.detector_channels = 4;
  c.detector_blocks = 2;
  c.detector_max_channels = 8;
  c.motion_downsample = 1;
  c.motion_channels = 4;
  c.motion_blocks = 2;
  c.motion_max_channels = 8;
  c.generator_channels = 4;
  c.generator_res_blocks = 1;
  c.perceptual_channels = 4;
  return c;
}

using ad::Var;

template <typename T>
struct Motion {
  Var<T> kp;    // (N, K, 2)
  Var<T> jac;   // (N, K, 4)
  Var<T> prob;  // (N, K, h, w) spatial keypoint distributions

  Motion detach() const { return {kp.detach(), jac.detach(), prob.detach()}; }
};

template <typename T>
struct DenseMotion {
  Var<T> flow;       // (N, h, w, 2) backward sampling grid
  Var<T> occlusion;  // (N, 1, h, w)
  Var<T> mask;       // (N, K+1, h, w)
  Var<T> sparse;     // (N, K+1, h, w, 2)
  ad::MotionDiagnostics diagnostics;
};

template <typename T>
struct Hourglass {
  std::vector<nn::DownBlock<T>> down;
  std::vector<nn::UpBlock<T>> up;
  int out_channels = 0;

  Hourglass() = default;
  Hourglass(nn::ParameterSet<T>& ps, const std::string& name, int in, int base, int blocks, int max_channels,
            nn::Rng& rng) {
    std::vector<int> ch;
    for (int i = 0; i < blocks; ++i) ch.push_back(std::min(max_channels, base << i));
    for (int i = 0; i < blocks; ++i)
      down.emplace_back(ps, name + ".down" + std::to_string(i), i == 0 ? in : ch[i - 1], ch[i], rng);
    for (int i = blocks - 1; i >= 0; --i) {
      const int cin = i == blocks - 1 ? ch[i] : 2 * ch[i];
      const int cout = i > 0 ? ch[i - 1] : ch[0];
      up.emplace_back(ps, name + ".up" + std::to_string(i), cin, cout, rng);
    }
    out_channels = ch[0] + in;
  }

  Var<T> operator()(const Var<T>& x) const {
    std::vector<Var<T>> skips{x};
    for (const auto& d : down) skips.push_back(d(skips.back()));
    Var<T> y = skips.back();
    for (std::size_t u = 0; u < up.size(); ++u) {
      y = up[u](y);
      y = ad::concat_channels<T>({y, skips[skips.size() - 2 - u]});
    }
    return y;
  }
};

template <typename T>
Var<T> downsample(Var<T> x, int times) {
  for (int i = 0; i < times; ++i) x = ad::avg_pool2(x);
  return x;
}

template <typename T>
struct KeypointDetector {
  ModelConfig cfg;
  Hourglass<T> trunk;
  nn::Conv2d<T> heat;
  nn::Conv2d<T> jacobian;

  KeypointDetector() = default;
  KeypointDetector(nn::ParameterSet<T>& ps, const ModelConfig& c, nn::Rng& rng) : cfg(c) {
    trunk = Hourglass<T>(ps, "detector.trunk", 3, c.detector_channels, c.detector_blocks, c.detector_max_channels, rng);
    heat = nn::Conv2d<T>(ps, "detector.heat", trunk.out_channels, c.num_kp, 3, rng);
    jacobian = nn::Conv2d<T>(ps, "detector.jacobian", trunk.out_channels, 4 * c.num_kp, 3, rng);
    // Start every local transform at the identity.
    jacobian.weight.mutable_value().fill(T(0));
    for (int k = 0; k < c.num_kp; ++k) {
      jacobian.bias.mutable_value()[k * 4] = T(1);
      jacobian.bias.mutable_value()[k * 4 + 3] = T(1);
    }
  }

  Motion<T> operator()(const Var<T>& img) const {
    require_shape(img.shape(), {img.dim(0), 3, cfg.image_size, cfg.image_size}, "keypoint detector input");
    const Var<T> feat = trunk(downsample(img, cfg.detector_downsample));
    const Var<T> logits = ad::avg_pool2(heat(feat));
    const Var<T> prob = ad::softmax_spatial(logits, static_cast<T>(cfg.temperature));
    const Var<T> kp = ad::soft_argmax(prob);
    const Var<T> jac = ad::weighted_spatial_sum(prob, ad::avg_pool2(jacobian(feat)), 4);
    return {kp, jac, prob};
  }
};

inline constexpr double kOcclusionBias = 3.0;

template <typename T>
struct DenseMotionNetwork {
  ModelConfig cfg;
  Hourglass<T> trunk;
  nn::Conv2d<T> mask;
  nn::Conv2d<T> occlusion;

  DenseMotionNetwork() = default;
  DenseMotionNetwork(nn::ParameterSet<T>& ps, const ModelConfig& c, nn::Rng& rng) : cfg(c) {
    const int in = (c.num_kp + 1) * 4;  // heatmap difference + deformed source per motion
    trunk = Hourglass<T>(ps, "motion.trunk", in, c.motion_channels, c.motion_blocks, c.motion_max_channels, rng);
    mask = nn::Conv2d<T>(ps, "motion.mask", trunk.out_channels, c.num_kp + 1, 3, rng);
    occlusion = nn::Conv2d<T>(ps, "motion.occlusion", trunk.out_channels, 1, 3, rng);
    // Start with the occlusion gate open; a closed gate has no gradient to reopen it.
    occlusion.bias.mutable_value().fill(T(kOcclusionBias));
  }

  DenseMotion<T> operator()(const Var<T>& src_img, const Motion<T>& src, const Motion<T>& drv) const {
    require_shape(drv.kp.shape(), src.kp.shape(), "dense motion keypoints");
    const int n = src.kp.dim(0), k = src.kp.dim(1), h = cfg.motion_size(), w = h;
    const T sigma = static_cast<T>(cfg.heatmap_sigma);

    const Var<T> heat = ad::sub(ad::gaussian_heatmaps(drv.kp, h, w, sigma), ad::gaussian_heatmaps(src.kp, h, w, sigma));
    const Var<T> heat_bg = ad::concat_channels<T>({Var<T>::constant(Tensor<T>({n, 1, h, w})), heat});

    DenseMotion<T> out;
    out.sparse = ad::sparse_motion(src.kp, src.jac, drv.kp, drv.jac, h, w, T(1e-6), &out.diagnostics);
    const Var<T> small = downsample(src_img, cfg.motion_downsample);
    const Var<T> deformed =
        ad::reshape(ad::grid_sample(small, ad::reshape(out.sparse, {n * (k + 1), h, w, 2}), k + 1),
                    {n, (k + 1) * 3, h, w});
    const Var<T> feat = trunk(ad::concat_channels<T>({heat_bg, deformed}));
    out.mask = ad::softmax_channels(mask(feat));
    out.flow = ad::combine_flow(out.mask, out.sparse);
    out.occlusion = ad::sigmoid(occlusion(feat));
    return out;
  }
};

// (N, h, w, 2) flow resized to (N, s, s, 2).
template <typename T>
Var<T> resize_flow(const Var<T>& flow, int s) {
  if (flow.dim(1) == s && flow.dim(2) == s) return flow;
  return ad::channels_last(ad::resize_bilinear(ad::channels_first(flow), s, s));
}

template <typename T>
Var<T> resize_map(const Var<T>& m, int s) {
  if (m.dim(2) == s && m.dim(3) == s) return m;
  return ad::resize_bilinear(m, s, s);
}

template <typename T>
struct Generator {
  ModelConfig cfg;
  nn::Conv2d<T> first;
  nn::DownBlock<T> down1, down2;
  std::vector<nn::ResBlock<T>> res;
  nn::UpBlock<T> up1, up2;
  nn::Conv2d<T> final;

  Generator() = default;
  Generator(nn::ParameterSet<T>& ps, const ModelConfig& c, nn::Rng& rng) : cfg(c) {
    const int g = c.generator_channels;
    first = nn::Conv2d<T>(ps, "generator.first", 3, g, 3, rng);
    down1 = nn::DownBlock<T>(ps, "generator.down1", g, 2 * g, rng);
    down2 = nn::DownBlock<T>(ps, "generator.down2", 2 * g, 4 * g, rng);
    for (int i = 0; i < c.generator_res_blocks; ++i)
      res.emplace_back(ps, "generator.res" + std::to_string(i), 4 * g, rng);
    up1 = nn::UpBlock<T>(ps, "generator.up1", 4 * g, 2 * g, rng);
    up2 = nn::UpBlock<T>(ps, "generator.up2", 4 * g, g, rng);
    final = nn::Conv2d<T>(ps, "generator.final", 2 * g, 3, 3, rng);
    // Start from a flat mid-gray output. Random output weights turn warped features
    // into noise, and the occlusion gate then closes before the features become useful.
    final.weight.mutable_value().fill(T(0));
  }

  Var<T> warp(const Var<T>& feat, const DenseMotion<T>& m) const {
    const int s = feat.dim(2);
    const Var<T> warped = ad::grid_sample(feat, resize_flow(m.flow, s));
    return ad::mul_channel_broadcast(warped, resize_map(m.occlusion, s));
  }

  Var<T> operator()(const Var<T>& src_img, const DenseMotion<T>& m) const {
    const Var<T> s0 = ad::leaky_relu(first(src_img));
    const Var<T> s1 = down1(s0);
    const Var<T> s2 = down2(s1);
    Var<T> y = warp(s2, m);
    for (const auto& r : res) y = r(y);
    y = ad::concat_channels<T>({up1(y), warp(s1, m)});
    y = ad::concat_channels<T>({up2(y), warp(s0, m)});
    return ad::sigmoid(final(y));
  }
};

// Multi-level L1 between frozen random-feature pyramids plus pixel L1 at
// dyadic scales. The extractor never trains.
template <typename T>
struct PerceptualLoss {
  ModelConfig cfg;
  std::vector<nn::Conv2d<T>> layers;
  nn::ParameterSet<T> frozen;

  PerceptualLoss() = default;
  explicit PerceptualLoss(const ModelConfig& c) : cfg(c) {
    nn::Rng rng(c.perceptual_seed);
    int in = 3;
    for (int l = 0; l < c.perceptual_levels; ++l) {
      const int out = c.perceptual_channels << l;
      layers.emplace_back(frozen, "perceptual.conv" + std::to_string(l), in, out, 3, rng);
      in = out;
    }
    for (auto& l : layers) {
      l.weight = Var<T>::constant(l.weight.value());
      l.bias = Var<T>::constant(l.bias.value());
    }
  }

  std::vector<Var<T>> features(const Var<T>& x) const {
    std::vector<Var<T>> f;
    Var<T> y = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (l > 0) y = ad::avg_pool2(y);
      y = ad::leaky_relu(layers[l](y));
      f.push_back(y);
    }
    return f;
  }

  Var<T> operator()(const Var<T>& a, const Var<T>& b) const {
    require_shape(b.shape(), a.shape(), "perceptual loss");
    const auto fa = features(a), fb = features(b);
    Var<T> loss = ad::mean_abs_diff(fa[0], fb[0]);
    for (std::size_t l = 1; l < fa.size(); ++l) loss = ad::add(loss, ad::mean_abs_diff(fa[l], fb[l]));
    Var<T> pa = a, pb = b;
    for (int s = 0; s < cfg.pyramid_scales; ++s) {
      if (s > 0) {
        pa = ad::avg_pool2(pa);
        pb = ad::avg_pool2(pb);
      }
      loss = ad::add(loss, ad::mean_abs_diff(pa, pb));
    }
    return loss;
  }
};

template <typename T>
struct TransferResult {
  Var<T> image;
  Motion<T> source;
  Motion<T> driving;
  DenseMotion<T> dense;
};

template <typename T>
class MotionTransferModel {
 public:
  explicit MotionTransferModel(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg.validate();
    nn::Rng rng(seed);
    detector_ = KeypointDetector<T>(params_, cfg, rng);
    motion_ = DenseMotionNetwork<T>(params_, cfg, rng);
    generator_ = Generator<T>(params_, cfg, rng);
  }

  MotionTransferModel(const MotionTransferModel&) = delete;
  MotionTransferModel& operator=(const MotionTransferModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  Motion<T> detect(const Var<T>& img) const { return detector_(img); }

  DenseMotion<T> dense_motion(const Var<T>& src_img, const Motion<T>& src, const Motion<T>& drv) const {
    return motion_(src_img, src, drv);
  }

  Var<T> synthesize(const Var<T>& src_img, const DenseMotion<T>& m) const { return generator_(src_img, m); }

  TransferResult<T> transfer(const Var<T>& src_img, const Motion<T>& src, const Motion<T>& drv) const {
    TransferResult<T> r;
    r.source = src;
    r.driving = drv;
    r.dense = dense_motion(src_img, src, drv);
    r.image = synthesize(src_img, r.dense);
    return r;
  }

  TransferResult<T> forward(const Var<T>& src_img, const Var<T>& drv_img) const {
    require_shape(drv_img.shape(), src_img.shape(), "motion transfer driving frame");
    return transfer(src_img, detect(src_img), detect(drv_img));
  }

 private:
  ModelConfig cfg_;
  nn::ParameterSet<T> params_;
  KeypointDetector<T> detector_;
  DenseMotionNetwork<T> motion_;
  Generator<T> generator_;
};

}  // namespace maa
