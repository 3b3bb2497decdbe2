#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "maa/ops.hpp"

namespace maa::nn {

using ad::Var;
using Rng = std::mt19937_64;

// Ordered, named collection of trainable leaves. Order is registration order
// and is what checkpoints and optimizers rely on.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [n, v] : items_)
      if (n == name) throw InputError("duplicate parameter name: " + name);
    auto v = Var<T>::leaf(std::move(init));
    items_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.second);
    return out;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw InputError("unknown parameter: " + name);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += it.second.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& it : items_) it.second.zero_grad();
  }

  // FNV-1a over the raw bytes of every value, in registration order.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& it : items_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(it.second.value().data());
      const std::size_t len = it.second.value().size() * sizeof(T);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
};

// He-uniform init drawn in double so float and double models start identical
// up to rounding.
template <typename T>
Tensor<T> he_uniform(std::vector<int> shape, int fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, int cin, int cout, int k, Rng& rng, double gain = 1.0) {
    weight = ps.add(name + ".weight", he_uniform<T>({cout, cin, k, k}, cin * k * k, rng, gain));
    bias = ps.add(name + ".bias", Tensor<T>({cout}));
  }

  int out_channels() const { return weight.dim(0); }
  Var<T> operator()(const Var<T>& x) const { return ad::conv2d(x, weight, bias); }
};

template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
    weight = ps.add(name + ".weight", he_uniform<T>({out, in}, in, rng, gain));
    bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::linear(x, weight, bias); }
};

// conv -> leaky relu -> 2x average pool
template <typename T>
struct DownBlock {
  Conv2d<T> conv;
  DownBlock() = default;
  DownBlock(ParameterSet<T>& ps, const std::string& name, int cin, int cout, Rng& rng)
      : conv(ps, name, cin, cout, 3, rng) {}
  Var<T> operator()(const Var<T>& x) const { return ad::avg_pool2(ad::leaky_relu(conv(x))); }
};

// 2x nearest upsample -> conv -> leaky relu
template <typename T>
struct UpBlock {
  Conv2d<T> conv;
  UpBlock() = default;
  UpBlock(ParameterSet<T>& ps, const std::string& name, int cin, int cout, Rng& rng)
      : conv(ps, name, cin, cout, 3, rng) {}
  Var<T> operator()(const Var<T>& x) const { return ad::leaky_relu(conv(ad::upsample_nearest2(x))); }
};

template <typename T>
struct ResBlock {
  Conv2d<T> conv1, conv2;
  ResBlock() = default;
  ResBlock(ParameterSet<T>& ps, const std::string& name, int c, Rng& rng)
      : conv1(ps, name + ".conv1", c, c, 3, rng), conv2(ps, name + ".conv2", c, c, 3, rng, 0.5) {}
  Var<T> operator()(const Var<T>& x) const {
    return ad::add(x, conv2(ad::leaky_relu(conv1(ad::leaky_relu(x)))));
  }
};

}  // namespace maa::nn
