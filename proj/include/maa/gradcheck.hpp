#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "maa/ops.hpp"

namespace maa::testing {

using ad::Var;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates within one step of a kink
  std::string worst;
};

inline Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

// Adds seeded uniform noise in [-scale, scale] to every leaf, moving a model
// off zero-initialized layers so gradient checks see a generic point.
template <typename T>
void perturb(const std::vector<Var<T>>& leaves, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto v : leaves)
    for (auto& x : v.mutable_value().vec()) x += static_cast<T>(d(rng));
}

// Scalar projection <x, r> so any op output becomes a loss.
inline Var<double> project(const Var<double>& x, const Tensor<double>& r) {
  return ad::sum_all(ad::mul(x, Var<double>::constant(r)));
}

// Compares analytic gradients of `loss` against central differences for every
// (or every `stride`-th) coordinate of each leaf. Relative error is measured as
// |a - n| / max(|a|, |n|, floor). With kink_tolerance > 0, coordinates whose
// one-sided differences disagree by more than that (relative) are skipped and
// counted instead, since the central difference there straddles a kink.
inline GradCheckResult check_gradients(const std::function<Var<double>()>& loss, std::vector<Var<double>> leaves,
                                       double step = 1e-5, double floor = 1e-4, std::size_t stride = 1,
                                       double kink_tolerance = 0.0) {
  for (auto& l : leaves) l.zero_grad();
  const Var<double> root = loss();
  const double center = root.item();
  ad::backward(root);
  GradCheckResult r;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    auto& leaf = leaves[p];
    const Tensor<double> analytic = leaf.grad();
    for (std::size_t i = 0; i < leaf.value().size(); i += stride) {
      const double orig = leaf.value()[i];
      leaf.mutable_value()[i] = orig + step;
      const double up = loss().item();
      leaf.mutable_value()[i] = orig - step;
      const double dn = loss().item();
      leaf.mutable_value()[i] = orig;
      const double numeric = (up - dn) / (2 * step);
      if (kink_tolerance > 0) {
        const double fwd = (up - center) / step, bwd = (center - dn) / step;
        if (std::abs(fwd - bwd) / std::max({std::abs(fwd), std::abs(bwd), floor}) > kink_tolerance) {
          ++r.skipped;
          continue;
        }
      }
      const double err = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = "leaf " + std::to_string(p) + " index " + std::to_string(i) + " analytic " +
                  std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace maa::testing
