#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "maa/errors.hpp"
#include "maa/tensor.hpp"

namespace maa {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2 a, Point2 b) { return a.x == b.x && a.y == b.y; }
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

// Row-major 2x2 local affine transform.
using Jacobian2 = std::array<double, 4>;

// K motion keypoints in normalized [-1, 1] coordinates, optionally with
// per-point local affine Jacobians.
struct KeypointSet {
  std::vector<Point2> points;
  std::vector<Jacobian2> jacobians{};

  int size() const { return static_cast<int>(points.size()); }
  const Point2& operator[](int i) const { return points[static_cast<std::size_t>(i)]; }

  bool all_finite() const {
    for (const auto& p : points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    return true;
  }
};

// Packs keypoint sets into an (N, K, 2) tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<KeypointSet>& sets) {
  require(!sets.empty(), "to_tensor: no keypoint sets");
  const int k = sets[0].size();
  Tensor<T> t({static_cast<int>(sets.size()), k, 2});
  for (std::size_t n = 0; n < sets.size(); ++n) {
    require(sets[n].size() == k, "to_tensor: keypoint sets differ in K");
    for (int j = 0; j < k; ++j) {
      t[(n * k + j) * 2] = static_cast<T>(sets[n][j].x);
      t[(n * k + j) * 2 + 1] = static_cast<T>(sets[n][j].y);
    }
  }
  return t;
}

// Unpacks (N, K, 2) keypoints and optional (N, K, 4) jacobians.
template <typename T>
std::vector<KeypointSet> keypoint_sets(const Tensor<T>& kp, const Tensor<T>* jac = nullptr) {
  require(kp.rank() == 3 && kp.dim(2) == 2, "keypoint_sets: expected (N, K, 2)");
  const int n = kp.dim(0), k = kp.dim(1);
  std::vector<KeypointSet> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& s = out[static_cast<std::size_t>(i)];
    for (int j = 0; j < k; ++j) {
      const std::size_t o = static_cast<std::size_t>(i) * k + j;
      s.points.push_back({static_cast<double>(kp[o * 2]), static_cast<double>(kp[o * 2 + 1])});
      if (jac)
        s.jacobians.push_back({static_cast<double>((*jac)[o * 4]), static_cast<double>((*jac)[o * 4 + 1]),
                               static_cast<double>((*jac)[o * 4 + 2]), static_cast<double>((*jac)[o * 4 + 3])});
    }
  }
  return out;
}

// Normalized coordinate <-> continuous pixel index (pixel centers at -1 and 1).
inline double to_pixel(double normalized, int extent) { return (normalized + 1.0) * 0.5 * (extent - 1); }
inline double to_normalized(double pixel, int extent) { return pixel / (extent - 1) * 2.0 - 1.0; }

}  // namespace maa
