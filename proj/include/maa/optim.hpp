#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "maa/nn.hpp"

namespace maa::nn {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<T>> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T step_size = static_cast<T>(opts_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const Tensor<T> g = p.grad();
      auto& val = p.mutable_value();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        val[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  const AdamOptions& options() const { return opts_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Var<T>>& params() const { return params_; }

 private:
  std::vector<Var<T>> params_;
  AdamOptions opts_;
  std::vector<Tensor<T>> m_, v_;
  long steps_ = 0;
};

}  // namespace maa::nn
