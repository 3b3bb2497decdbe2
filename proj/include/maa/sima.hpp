#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "maa/autodiff.hpp"
#include "maa/geometry.hpp"
#include "maa/topology.hpp"

// Shape-invariant motion adaptation: losses on included angles between
// keypoint triplets, comparing a driving frame against a synthesized image.

namespace maa::sima {

using ad::Var;

inline constexpr double kAngleEps = 1e-8;
// Vertex index that stands for the mean of all keypoints.
inline constexpr int kCentroid = -1;

struct AngleTriplet {
  int vertex = 0;
  int arm_a = 0;
  int arm_b = 0;
  double weight = 1.0;
};

struct AngleResult {
  double angle = 0.0;
  bool degenerate = false;
};

// Included angle at `vertex`; zero-length arms give angle 0.
template <typename T>
inline AngleResult included_angle_impl(T vx, T vy, T ax, T ay, T bx, T by) {
  const T ux = ax - vx, uy = ay - vy, wx = bx - vx, wy = by - vy;
  const T nu = std::sqrt(ux * ux + uy * uy), nw = std::sqrt(wx * wx + wy * wy);
  if (nu * nw <= T(kAngleEps)) return {0.0, true};
  // Equal to arccos of the normalized dot product, without its loss of precision near 0 and pi.
  return {static_cast<double>(std::atan2(std::abs(ux * wy - uy * wx), ux * wx + uy * wy)), false};
}

inline double included_angle(Point2 vertex, Point2 a, Point2 b) {
  return included_angle_impl(vertex.x, vertex.y, a.x, a.y, b.x, b.y).angle;
}

inline Point2 centroid(const KeypointSet& kps) {
  require(kps.size() >= 1, "centroid: empty keypoint set");
  Point2 c;
  for (const auto& p : kps.points) c = c + p;
  return (1.0 / kps.size()) * c;
}

// Included angles for a batch of keypoint sets: kp (N, K, 2) -> (N, M).
template <typename T>
Var<T> triplet_angles(const Var<T>& kp, const std::vector<AngleTriplet>& triplets) {
  const auto& s = kp.shape();
  require(s.size() == 3 && s[2] == 2, "triplet_angles: expected (N, K, 2) keypoints");
  const int n = s[0], k = s[1], m = static_cast<int>(triplets.size());
  for (const auto& t : triplets) {
    require(t.vertex == kCentroid || (t.vertex >= 0 && t.vertex < k), "triplet_angles: vertex index out of range");
    require(t.arm_a >= 0 && t.arm_a < k && t.arm_b >= 0 && t.arm_b < k, "triplet_angles: arm index out of range");
  }
  const auto& kv = kp.value();
  auto vertex_of = [&kv, k](int i, int v) {
    if (v != kCentroid) {
      const std::size_t o = (static_cast<std::size_t>(i) * k + v) * 2;
      return std::array<T, 2>{kv[o], kv[o + 1]};
    }
    std::array<T, 2> c{0, 0};
    for (int j = 0; j < k; ++j) {
      c[0] += kv[(static_cast<std::size_t>(i) * k + j) * 2];
      c[1] += kv[(static_cast<std::size_t>(i) * k + j) * 2 + 1];
    }
    c[0] /= T(k);
    c[1] /= T(k);
    return c;
  };
  Tensor<T> out({n, m});
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < m; ++t) {
      const auto& tr = triplets[static_cast<std::size_t>(t)];
      const auto v = vertex_of(i, tr.vertex);
      const std::size_t a = (static_cast<std::size_t>(i) * k + tr.arm_a) * 2;
      const std::size_t b = (static_cast<std::size_t>(i) * k + tr.arm_b) * 2;
      out[static_cast<std::size_t>(i) * m + t] =
          static_cast<T>(included_angle_impl(v[0], v[1], kv[a], kv[a + 1], kv[b], kv[b + 1]).angle);
    }
  return ad::make_op<T>(std::move(out), {kp}, [n, k, m, triplets, vertex_of](ad::Node<T>& self) {
    auto* g = ad::grad_of(self, 0);
    if (!g) return;
    const auto& kv = self.parents[0]->value;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < m; ++t) {
        const T go = self.grad[static_cast<std::size_t>(i) * m + t];
        if (go == T(0)) continue;
        const auto& tr = triplets[static_cast<std::size_t>(t)];
        const auto v = vertex_of(i, tr.vertex);
        const std::size_t a = (static_cast<std::size_t>(i) * k + tr.arm_a) * 2;
        const std::size_t b = (static_cast<std::size_t>(i) * k + tr.arm_b) * 2;
        const T ux = kv[a] - v[0], uy = kv[a + 1] - v[1], wx = kv[b] - v[0], wy = kv[b + 1] - v[1];
        const T nu = std::sqrt(ux * ux + uy * uy), nw = std::sqrt(wx * wx + wy * wy);
        if (nu * nw <= T(kAngleEps)) continue;
        // d(angle)/du = -sigma * perp(u) / |u|^2 and d(angle)/dw = sigma * perp(w) / |w|^2,
        // sigma the orientation of (u, w); collinear arms take the zero subgradient.
        const T cross = ux * wy - uy * wx;
        const T sigma = cross > 0 ? T(1) : (cross < 0 ? T(-1) : T(0));
        if (sigma == T(0)) continue;
        const T fu = -go * sigma / (nu * nu), fw = go * sigma / (nw * nw);
        const T gux = fu * -uy, guy = fu * ux;
        const T gwx = fw * -wy, gwy = fw * wx;
        (*g)[a] += gux;
        (*g)[a + 1] += guy;
        (*g)[b] += gwx;
        (*g)[b + 1] += gwy;
        const T gvx = -(gux + gwx), gvy = -(guy + gwy);
        if (tr.vertex != kCentroid) {
          const std::size_t o = (static_cast<std::size_t>(i) * k + tr.vertex) * 2;
          (*g)[o] += gvx;
          (*g)[o + 1] += gvy;
        } else {
          for (int j = 0; j < k; ++j) {
            (*g)[(static_cast<std::size_t>(i) * k + j) * 2] += gvx / T(k);
            (*g)[(static_cast<std::size_t>(i) * k + j) * 2 + 1] += gvy / T(k);
          }
        }
      }
  });
}

// mean over the batch of (1/M) sum_m w_m |angle_d - angle_p|, with the driving
// angles held constant.
template <typename T>
Var<T> angle_consistency(const std::vector<AngleTriplet>& triplets, const Var<T>& kp_driving, const Var<T>& kp_synth) {
  require_shape(kp_synth.shape(), kp_driving.shape(), "angle_consistency keypoints");
  const int n = kp_synth.dim(0), m = static_cast<int>(triplets.size());
  if (m == 0) return Var<T>::constant(Tensor<T>({1}));
  const Tensor<T> target = triplet_angles(kp_driving.detach(), triplets).value();
  const Var<T> angles = triplet_angles(kp_synth, triplets);
  std::vector<T> w;
  for (const auto& t : triplets) w.push_back(static_cast<T>(t.weight));
  const T norm = T(1) / (T(n) * T(m));
  T acc = 0;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < m; ++t) {
      const std::size_t o = static_cast<std::size_t>(i) * m + t;
      acc += w[static_cast<std::size_t>(t)] * std::abs(angles.value()[o] - target[o]);
    }
  return ad::make_op<T>(Tensor<T>({1}, acc * norm), {angles}, [n, m, w, target, norm](ad::Node<T>& self) {
    auto* g = ad::grad_of(self, 0);
    if (!g) return;
    const auto& av = self.parents[0]->value;
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < m; ++t) {
        const std::size_t o = static_cast<std::size_t>(i) * m + t;
        const T d = av[o] - target[o];
        const T sg = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
        (*g)[o] += self.grad[0] * norm * w[static_cast<std::size_t>(t)] * sg;
      }
  });
}

inline std::vector<AngleTriplet> structured_triplets(const topology::TopologyGraph& g) {
  std::vector<AngleTriplet> out;
  for (const auto& t : topology::enumerate_structured_triplets(g)) out.push_back({t.vertex, t.arm_a, t.arm_b, t.gamma});
  return out;
}

// One centroid-vertex triplet per unordered pair of unstructured keypoints.
inline std::vector<AngleTriplet> unstructured_triplets(const std::vector<int>& unstructured) {
  std::vector<AngleTriplet> out;
  for (std::size_t a = 0; a < unstructured.size(); ++a)
    for (std::size_t b = a + 1; b < unstructured.size(); ++b)
      out.push_back({kCentroid, unstructured[a], unstructured[b], 1.0});
  return out;
}

template <typename T>
struct LossValue {
  Var<T> loss;
  bool empty_warning = false;
};

template <typename T>
LossValue<T> structured_angle_loss(const std::vector<AngleTriplet>& triplets, const Var<T>& kp_driving,
                                   const Var<T>& kp_synth) {
  return {angle_consistency(triplets, kp_driving, kp_synth), triplets.empty()};
}

template <typename T>
Var<T> unstructured_angle_loss(const std::vector<int>& unstructured, const Var<T>& kp_driving, const Var<T>& kp_synth) {
  return angle_consistency(unstructured_triplets(unstructured), kp_driving, kp_synth);
}

template <typename T>
struct MotionAdaptationLoss {
  Var<T> total;
  Var<T> structured;
  Var<T> unstructured;
  bool empty_structure = false;
};

// L_ma = L_rs + L_ru over the discovered topology.
template <typename T>
MotionAdaptationLoss<T> motion_adaptation_loss(const topology::TopologyGraph& g, const Var<T>& kp_driving,
                                               const Var<T>& kp_synth) {
  require(kp_synth.dim(1) == g.K, "motion_adaptation_loss: topology K does not match keypoints");
  auto rs = structured_angle_loss(structured_triplets(g), kp_driving, kp_synth);
  auto ru = unstructured_angle_loss(g.unstructured, kp_driving, kp_synth);
  return {ad::add(rs.loss, ru), rs.loss, ru, rs.empty_warning};
}

// Plain-value conveniences over single keypoint sets.
inline double structured_angle_loss(const std::vector<AngleTriplet>& triplets, const KeypointSet& kd,
                                    const KeypointSet& kp) {
  return structured_angle_loss(triplets, Var<double>::constant(to_tensor<double>({kd})),
                               Var<double>::constant(to_tensor<double>({kp})))
      .loss.item();
}

inline double unstructured_angle_loss(const std::vector<int>& u, const KeypointSet& kd, const KeypointSet& kp) {
  return unstructured_angle_loss(u, Var<double>::constant(to_tensor<double>({kd})),
                                 Var<double>::constant(to_tensor<double>({kp})))
      .item();
}

inline double motion_adaptation_loss(const topology::TopologyGraph& g, const KeypointSet& kd, const KeypointSet& kp) {
  return motion_adaptation_loss(g, Var<double>::constant(to_tensor<double>({kd})),
                                Var<double>::constant(to_tensor<double>({kp})))
      .total.item();
}

}  // namespace maa::sima
