#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "maa/autodiff.hpp"

// Differentiable tensor operations used by the motion-transfer stack.
// Image-like tensors are NCHW; point sets are (N, K, 2) with x first.

namespace maa::ad {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Normalized [-1, 1] coordinate of pixel index i on an axis of length n
// (pixel centers at the end points, i.e. align-corners convention).
template <typename T>
inline T grid_coord(int i, int n) {
  return n > 1 ? T(-1) + T(2) * T(i) / T(n - 1) : T(0);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& s) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_of(s, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& s) {
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i];
    if (auto* g = grad_of(s, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= s.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& s) {
    const auto& av = s.parents[0]->value;
    const auto& bv = s.parents[1]->value;
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i] * bv[i];
    if (auto* g = grad_of(s, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= k;
  return make_op<T>(std::move(out), {a}, [k](Node<T>& s) {
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * s.grad[i];
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = v > 0 ? v : slope * v;
  return make_op<T>(std::move(out), {a}, [slope](Node<T>& s) {
    const auto& x = s.parents[0]->value;
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i] * (x[i] > 0 ? T(1) : slope);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = T(1) / (T(1) + std::exp(-v));
  return make_op<T>(std::move(out), {a}, [](Node<T>& s) {
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        T y = s.value[i];
        (*g)[i] += s.grad[i] * y * (T(1) - y);
      }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return make_op<T>(std::move(out), {a}, [](Node<T>& s) {
    if (auto* g = grad_of(s, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s.grad[i];
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out({1}, a.value().sum());
  return make_op<T>(std::move(out), {a}, [](Node<T>& s) {
    if (auto* g = grad_of(s, 0))
      for (auto& v : g->vec()) v += s.grad[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / T(a.value().size()));
}

// mean |a - b| over all elements.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "mean_abs_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
  const T inv_n = T(1) / T(av.size());
  return make_op<T>(Tensor<T>({1}, acc * inv_n), {a, b}, [inv_n](Node<T>& s) {
    const auto& x = s.parents[0]->value;
    const auto& y = s.parents[1]->value;
    const T go = s.grad[0] * inv_n;
    auto* ga = grad_of(s, 0);
    auto* gb = grad_of(s, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T d = x[i] - y[i];
      const T sg = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
      if (ga) (*ga)[i] += go * sg;
      if (gb) (*gb)[i] -= go * sg;
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

template <typename T>
void im2col(const T* in, int c, int h, int w, int k, int pad, T* col) {
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const T* src = in + static_cast<std::size_t>(ci) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          std::fill(dst, dst + x_lo, T(0));
          std::copy(src + sy * w + x_lo + dx, src + sy * w + x_hi + dx, dst + x_lo);
          std::fill(dst + x_hi, dst + w, T(0));
        }
      }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int pad, T* in) {
  const int hw = h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        T* dst = in + static_cast<std::size_t>(ci) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + y * w;
          T* drow = dst + sy * w + dx;
          for (int x = x_lo; x < x_hi; ++x) drow[x] += src[x];
        }
      }
}

}  // namespace detail

// Stride-1 "same" convolution. w: (Cout, Cin, k, k) with odd k, b: (Cout).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 4 && ws.size() == 4, "conv2d: expected 4-d input and weight");
  require(ws[1] == xs[1], "conv2d: channel mismatch, input has " + std::to_string(xs[1]) + ", weight expects " +
                              std::to_string(ws[1]));
  require(ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d: kernel must be square and odd");
  require_shape(b.shape(), {ws[0]}, "conv2d bias");
  const int n = xs[0], ci = xs[1], h = xs[2], wd = xs[3], co = ws[0], k = ws[2], pad = k / 2;
  const int hw = h * wd, ck = ci * k * k;

  Tensor<T> out({n, co, h, wd});
  std::vector<T> col(static_cast<std::size_t>(ck) * hw);
  CMapMat<T> wm(w.value().data(), co, ck);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.value().data(), co);
  for (int i = 0; i < n; ++i) {
    const T* in = x.value().data() + static_cast<std::size_t>(i) * ci * hw;
    MapMat<T> om(out.data() + static_cast<std::size_t>(i) * co * hw, co, hw);
    if (k == 1) {
      om.noalias() = wm * CMapMat<T>(in, ci, hw);
    } else {
      detail::im2col(in, ci, h, wd, k, pad, col.data());
      om.noalias() = wm * CMapMat<T>(col.data(), ck, hw);
    }
    om.colwise() += bv;
  }

  return make_op<T>(std::move(out), {x, w, b}, [n, ci, h, wd, co, k, pad, hw, ck](Node<T>& s) {
    const auto& xv = s.parents[0]->value;
    const auto& wv = s.parents[1]->value;
    auto* gx = grad_of(s, 0);
    auto* gw = grad_of(s, 1);
    auto* gb = grad_of(s, 2);
    std::vector<T> col(static_cast<std::size_t>(ck) * hw);
    std::vector<T> dcol(gx && k != 1 ? static_cast<std::size_t>(ck) * hw : 0);
    CMapMat<T> wm(wv.data(), co, ck);
    for (int i = 0; i < n; ++i) {
      const T* in = xv.data() + static_cast<std::size_t>(i) * ci * hw;
      CMapMat<T> go(s.grad.data() + static_cast<std::size_t>(i) * co * hw, co, hw);
      if (gb) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gbv(gb->data(), co);
        gbv += go.rowwise().sum();
      }
      if (gw) {
        MapMat<T> gwm(gw->data(), co, ck);
        if (k == 1) {
          gwm.noalias() += go * CMapMat<T>(in, ci, hw).transpose();
        } else {
          detail::im2col(in, ci, h, wd, k, pad, col.data());
          gwm.noalias() += go * CMapMat<T>(col.data(), ck, hw).transpose();
        }
      }
      if (gx) {
        T* gin = gx->data() + static_cast<std::size_t>(i) * ci * hw;
        if (k == 1) {
          MapMat<T>(gin, ci, hw).noalias() += wm.transpose() * go;
        } else {
          MapMat<T>(dcol.data(), ck, hw).noalias() = wm.transpose() * go;
          detail::col2im(dcol.data(), ci, h, wd, k, pad, gin);
        }
      }
    }
  });
}

// x: (N, F), w: (O, F), b: (O) -> (N, O)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(x.value().rank() == 2 && w.value().rank() == 2, "linear: expected 2-d input and weight");
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  require(w.dim(1) == f, "linear: feature mismatch");
  require_shape(b.shape(), {o}, "linear bias");
  Tensor<T> out({n, o});
  MapMat<T> om(out.data(), n, o);
  om.noalias() = CMapMat<T>(x.value().data(), n, f) * CMapMat<T>(w.value().data(), o, f).transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), o);
  return make_op<T>(std::move(out), {x, w, b}, [n, f, o](Node<T>& s) {
    CMapMat<T> go(s.grad.data(), n, o);
    if (auto* gx = grad_of(s, 0))
      MapMat<T>(gx->data(), n, f).noalias() += go * CMapMat<T>(s.parents[1]->value.data(), o, f);
    if (auto* gw = grad_of(s, 1))
      MapMat<T>(gw->data(), o, f).noalias() += go.transpose() * CMapMat<T>(s.parents[0]->value.data(), n, f);
    if (auto* gb = grad_of(s, 2))
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), o) += go.colwise().sum();
  });
}

// ---------------------------------------------------------------- resampling

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2: expected NCHW with even H, W");
  const int planes = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
  Tensor<T> out({s[0], s[1], ho, wo});
  const T* in = x.value().data();
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        const T* r0 = in + (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
        out[(static_cast<std::size_t>(p) * ho + y) * wo + xx] = T(0.25) * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
  return make_op<T>(std::move(out), {x}, [planes, h, w, ho, wo](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int p = 0; p < planes; ++p)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const T v = T(0.25) * s.grad[(static_cast<std::size_t>(p) * ho + y) * wo + xx];
          T* r0 = g->data() + (static_cast<std::size_t>(p) * h + 2 * y) * w + 2 * xx;
          r0[0] += v;
          r0[1] += v;
          r0[w] += v;
          r0[w + 1] += v;
        }
  });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4, "upsample_nearest2: expected NCHW");
  const int planes = s[0] * s[1], h = s[2], w = s[3], ho = 2 * h, wo = 2 * w;
  Tensor<T> out({s[0], s[1], ho, wo});
  const T* in = x.value().data();
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out[(static_cast<std::size_t>(p) * ho + y) * wo + xx] = in[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
  return make_op<T>(std::move(out), {x}, [planes, h, w, ho, wo](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int p = 0; p < planes; ++p)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          (*g)[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] += s.grad[(static_cast<std::size_t>(p) * ho + y) * wo + xx];
  });
}

// Bilinear resize with align-corners sampling.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int ho, int wo) {
  const auto& s = x.shape();
  require(s.size() == 4 && ho > 0 && wo > 0, "resize_bilinear: expected NCHW and positive size");
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  struct Tap {
    int i0, i1;
    T f;
  };
  auto taps = [](int n_out, int n_in) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      const T src = n_out > 1 ? T(i) * T(n_in - 1) / T(n_out - 1) : T(0);
      int i0 = std::min(static_cast<int>(std::floor(src)), n_in - 1);
      int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, src - T(i0)};
    }
    return t;
  };
  auto ty = taps(ho, h);
  auto tx = taps(wo, w);
  Tensor<T> out({s[0], s[1], ho, wo});
  const T* in = x.value().data();
  for (int p = 0; p < planes; ++p) {
    const T* src = in + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < wo; ++xx) {
        const auto& b = tx[static_cast<std::size_t>(xx)];
        const T top = src[a.i0 * w + b.i0] * (1 - b.f) + src[a.i0 * w + b.i1] * b.f;
        const T bot = src[a.i1 * w + b.i0] * (1 - b.f) + src[a.i1 * w + b.i1] * b.f;
        dst[y * wo + xx] = top * (1 - a.f) + bot * a.f;
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [planes, h, w, ho, wo, ty, tx](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int p = 0; p < planes; ++p) {
      T* dst = g->data() + static_cast<std::size_t>(p) * h * w;
      const T* go = s.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int y = 0; y < ho; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < wo; ++xx) {
          const auto& b = tx[static_cast<std::size_t>(xx)];
          const T v = go[y * wo + xx];
          dst[a.i0 * w + b.i0] += v * (1 - a.f) * (1 - b.f);
          dst[a.i0 * w + b.i1] += v * (1 - a.f) * b.f;
          dst[a.i1 * w + b.i0] += v * a.f * (1 - b.f);
          dst[a.i1 * w + b.i1] += v * a.f * b.f;
        }
      }
    }
  });
}

// ---------------------------------------------------------------- layout

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const auto& s0 = xs[0].shape();
  require(s0.size() == 4, "concat_channels: expected NCHW");
  int c_total = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3], "concat_channels: shape mismatch");
    c_total += s[1];
  }
  const int n = s0[0];
  const std::size_t hw = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor<T> out({n, c_total, s0[2], s0[3]});
  std::vector<int> channels;
  for (int i = 0; i < n; ++i) {
    std::size_t off = static_cast<std::size_t>(i) * c_total * hw;
    for (const auto& x : xs) {
      const std::size_t len = static_cast<std::size_t>(x.dim(1)) * hw;
      std::copy_n(x.value().data() + i * len, len, out.data() + off);
      off += len;
    }
  }
  for (const auto& x : xs) channels.push_back(x.dim(1));
  return make_op<T>(std::move(out), xs, [n, c_total, hw, channels](Node<T>& s) {
    for (int i = 0; i < n; ++i) {
      std::size_t off = static_cast<std::size_t>(i) * c_total * hw;
      for (std::size_t p = 0; p < channels.size(); ++p) {
        const std::size_t len = static_cast<std::size_t>(channels[p]) * hw;
        if (auto* g = grad_of(s, p)) {
          T* dst = g->data() + i * len;
          for (std::size_t j = 0; j < len; ++j) dst[j] += s.grad[off + j];
        }
        off += len;
      }
    }
  });
}

// (N, H, W, C) -> (N, C, H, W)
template <typename T>
Var<T> channels_first(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4, "channels_first: expected 4-d input");
  const int n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<T> out({n, c, h, w});
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch)
          out.at(i, ch, y, xx) = x.value()[((static_cast<std::size_t>(i) * h + y) * w + xx) * c + ch];
  return make_op<T>(std::move(out), {x}, [n, h, w, c](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int ch = 0; ch < c; ++ch)
            (*g)[((static_cast<std::size_t>(i) * h + y) * w + xx) * c + ch] += s.grad.at(i, ch, y, xx);
  });
}

// (N, C, H, W) -> (N, H, W, C)
template <typename T>
Var<T> channels_last(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4, "channels_last: expected NCHW");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor<T> out({n, h, w, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out[((static_cast<std::size_t>(i) * h + y) * w + xx) * c + ch] = x.value().at(i, ch, y, xx);
  return make_op<T>(std::move(out), {x}, [n, c, h, w](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            g->at(i, ch, y, xx) += s.grad[((static_cast<std::size_t>(i) * h + y) * w + xx) * c + ch];
  });
}

// x: (N, C, H, W), m: (N, 1, H, W) -> x * m broadcast over channels.
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& x, const Var<T>& m) {
  const auto& s = x.shape();
  require_shape(m.shape(), {s[0], 1, s[2], s[3]}, "mul_channel_broadcast mask");
  const int n = s[0], c = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) out[(static_cast<std::size_t>(i) * c + ch) * hw + j] *= m.value()[i * hw + j];
  return make_op<T>(std::move(out), {x, m}, [n, c, hw](Node<T>& s) {
    const auto& xv = s.parents[0]->value;
    const auto& mv = s.parents[1]->value;
    auto* gx = grad_of(s, 0);
    auto* gm = grad_of(s, 1);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * hw + j;
          if (gx) (*gx)[idx] += s.grad[idx] * mv[i * hw + j];
          if (gm) (*gm)[i * hw + j] += s.grad[idx] * xv[idx];
        }
  });
}

// ---------------------------------------------------------------- softmax family

// Softmax over H*W for each (n, c) plane, logits divided by `temperature`.
template <typename T>
Var<T> softmax_spatial(const Var<T>& x, T temperature) {
  const auto& s = x.shape();
  require(s.size() == 4, "softmax_spatial: expected NCHW");
  const int planes = s[0] * s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out(s);
  for (int p = 0; p < planes; ++p) {
    const T* in = x.value().data() + p * hw;
    T* o = out.data() + p * hw;
    T mx = in[0];
    for (std::size_t j = 1; j < hw; ++j) mx = std::max(mx, in[j]);
    T z = 0;
    for (std::size_t j = 0; j < hw; ++j) z += (o[j] = std::exp((in[j] - mx) / temperature));
    for (std::size_t j = 0; j < hw; ++j) o[j] /= z;
  }
  return make_op<T>(std::move(out), {x}, [planes, hw, temperature](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int p = 0; p < planes; ++p) {
      const T* y = s.value.data() + p * hw;
      const T* go = s.grad.data() + p * hw;
      T dot = 0;
      for (std::size_t j = 0; j < hw; ++j) dot += y[j] * go[j];
      for (std::size_t j = 0; j < hw; ++j) (*g)[p * hw + j] += y[j] * (go[j] - dot) / temperature;
    }
  });
}

// Softmax across the channel axis at every pixel.
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const auto& s = x.shape();
  require(s.size() == 4, "softmax_channels: expected NCHW");
  const int n = s[0], c = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out(s);
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hw; ++j) {
      auto idx = [&](int ch) { return (static_cast<std::size_t>(i) * c + ch) * hw + j; };
      T mx = x.value()[idx(0)];
      for (int ch = 1; ch < c; ++ch) mx = std::max(mx, x.value()[idx(ch)]);
      T z = 0;
      for (int ch = 0; ch < c; ++ch) z += (out[idx(ch)] = std::exp(x.value()[idx(ch)] - mx));
      for (int ch = 0; ch < c; ++ch) out[idx(ch)] /= z;
    }
  return make_op<T>(std::move(out), {x}, [n, c, hw](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < hw; ++j) {
        auto idx = [&](int ch) { return (static_cast<std::size_t>(i) * c + ch) * hw + j; };
        T dot = 0;
        for (int ch = 0; ch < c; ++ch) dot += s.value[idx(ch)] * s.grad[idx(ch)];
        for (int ch = 0; ch < c; ++ch) (*g)[idx(ch)] += s.value[idx(ch)] * (s.grad[idx(ch)] - dot);
      }
  });
}

// Expected grid coordinate under each (n, k) probability plane -> (N, K, 2).
template <typename T>
Var<T> soft_argmax(const Var<T>& prob) {
  const auto& s = prob.shape();
  require(s.size() == 4, "soft_argmax: expected NCHW");
  const int n = s[0], k = s[1], h = s[2], w = s[3];
  Tensor<T> out({n, k, 2});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      T ex = 0, ey = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const T p = prob.value().at(i, j, y, x);
          ex += p * grid_coord<T>(x, w);
          ey += p * grid_coord<T>(y, h);
        }
      out[(static_cast<std::size_t>(i) * k + j) * 2] = ex;
      out[(static_cast<std::size_t>(i) * k + j) * 2 + 1] = ey;
    }
  return make_op<T>(std::move(out), {prob}, [n, k, h, w](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const T gx = s.grad[(static_cast<std::size_t>(i) * k + j) * 2];
        const T gy = s.grad[(static_cast<std::size_t>(i) * k + j) * 2 + 1];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) g->at(i, j, y, x) += gx * grid_coord<T>(x, w) + gy * grid_coord<T>(y, h);
      }
  });
}

// out[n, k, m] = sum_hw prob[n, k, hw] * maps[n, k * M + m, hw]
template <typename T>
Var<T> weighted_spatial_sum(const Var<T>& prob, const Var<T>& maps, int m) {
  const auto& s = prob.shape();
  require(s.size() == 4, "weighted_spatial_sum: expected NCHW probabilities");
  const int n = s[0], k = s[1];
  require_shape(maps.shape(), {n, k * m, s[2], s[3]}, "weighted_spatial_sum maps");
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  Tensor<T> out({n, k, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const T* p = prob.value().data() + (static_cast<std::size_t>(i) * k + j) * hw;
      for (int c = 0; c < m; ++c) {
        const T* mp = maps.value().data() + (static_cast<std::size_t>(i) * k * m + j * m + c) * hw;
        T acc = 0;
        for (std::size_t q = 0; q < hw; ++q) acc += p[q] * mp[q];
        out[(static_cast<std::size_t>(i) * k + j) * m + c] = acc;
      }
    }
  return make_op<T>(std::move(out), {prob, maps}, [n, k, m, hw](Node<T>& s) {
    const auto& pv = s.parents[0]->value;
    const auto& mv = s.parents[1]->value;
    auto* gp = grad_of(s, 0);
    auto* gm = grad_of(s, 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t po = (static_cast<std::size_t>(i) * k + j) * hw;
        for (int c = 0; c < m; ++c) {
          const T go = s.grad[(static_cast<std::size_t>(i) * k + j) * m + c];
          const std::size_t mo = (static_cast<std::size_t>(i) * k * m + j * m + c) * hw;
          for (std::size_t q = 0; q < hw; ++q) {
            if (gp) (*gp)[po + q] += go * mv[mo + q];
            if (gm) (*gm)[mo + q] += go * pv[po + q];
          }
        }
      }
  });
}

// ---------------------------------------------------------------- geometry

// Isotropic Gaussian bumps at each keypoint: kp (N, K, 2) -> (N, K, H, W).
template <typename T>
Var<T> gaussian_heatmaps(const Var<T>& kp, int h, int w, T sigma) {
  const auto& s = kp.shape();
  require(s.size() == 3 && s[2] == 2, "gaussian_heatmaps: expected (N, K, 2) keypoints");
  const int n = s[0], k = s[1];
  const T inv2s2 = T(1) / (T(2) * sigma * sigma);
  Tensor<T> out({n, k, h, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const T px = kp.value()[(static_cast<std::size_t>(i) * k + j) * 2];
      const T py = kp.value()[(static_cast<std::size_t>(i) * k + j) * 2 + 1];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const T dx = grid_coord<T>(x, w) - px, dy = grid_coord<T>(y, h) - py;
          out.at(i, j, y, x) = std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
    }
  return make_op<T>(std::move(out), {kp}, [n, k, h, w, inv2s2](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    const auto& kv = s.parents[0]->value;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t o = (static_cast<std::size_t>(i) * k + j) * 2;
        T gx = 0, gy = 0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const T v = s.value.at(i, j, y, x) * s.grad.at(i, j, y, x) * T(2) * inv2s2;
            gx += v * (grid_coord<T>(x, w) - kv[o]);
            gy += v * (grid_coord<T>(y, h) - kv[o + 1]);
          }
        (*g)[o] += gx;
        (*g)[o + 1] += gy;
      }
  });
}

struct MotionDiagnostics {
  int clamped_jacobians = 0;
};

// Inverse of a 2x2 matrix [a b; c d] with |det| clamped from below.
template <typename T>
struct ClampedInverse2 {
  std::array<T, 4> inv;
  T det_used;
  bool clamped;
};

template <typename T>
ClampedInverse2<T> clamped_inverse2(const T* m, T min_det) {
  const T det = m[0] * m[3] - m[1] * m[2];
  ClampedInverse2<T> r;
  r.clamped = std::abs(det) < min_det;
  r.det_used = r.clamped ? (det < 0 ? -min_det : min_det) : det;
  r.inv = {m[3] / r.det_used, -m[1] / r.det_used, -m[2] / r.det_used, m[0] / r.det_used};
  return r;
}

// First-order per-keypoint backward flows on an H x W grid.
//   channel 0:   identity (background)
//   channel k+1: p_src,k + J_src,k J_drv,k^-1 (z - p_drv,k)
// kp_*: (N, K, 2); jac_*: (N, K, 4) row-major 2x2. Output (N, K+1, H, W, 2).
template <typename T>
Var<T> sparse_motion(const Var<T>& kp_src, const Var<T>& jac_src, const Var<T>& kp_drv, const Var<T>& jac_drv,
                     int h, int w, T min_det = T(1e-6), MotionDiagnostics* diag = nullptr) {
  const auto& s = kp_src.shape();
  require(s.size() == 3 && s[2] == 2, "sparse_motion: expected (N, K, 2) keypoints");
  require_shape(kp_drv.shape(), s, "sparse_motion driving keypoints");
  require_shape(jac_src.shape(), {s[0], s[1], 4}, "sparse_motion source jacobians");
  require_shape(jac_drv.shape(), {s[0], s[1], 4}, "sparse_motion driving jacobians");
  const int n = s[0], k = s[1];
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n, k + 1, h, w, 2});
  std::vector<std::array<T, 4>> affine(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    T* bg = out.data() + static_cast<std::size_t>(i) * (k + 1) * hw * 2;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bg[(y * w + x) * 2] = grid_coord<T>(x, w);
        bg[(y * w + x) * 2 + 1] = grid_coord<T>(y, h);
      }
    for (int j = 0; j < k; ++j) {
      const std::size_t ki = static_cast<std::size_t>(i) * k + j;
      const T* js = jac_src.value().data() + ki * 4;
      auto inv = clamped_inverse2(jac_drv.value().data() + ki * 4, min_det);
      if (inv.clamped && diag) ++diag->clamped_jacobians;
      auto& a = affine[ki];
      a = {js[0] * inv.inv[0] + js[1] * inv.inv[2], js[0] * inv.inv[1] + js[1] * inv.inv[3],
           js[2] * inv.inv[0] + js[3] * inv.inv[2], js[2] * inv.inv[1] + js[3] * inv.inv[3]};
      const T psx = kp_src.value()[ki * 2], psy = kp_src.value()[ki * 2 + 1];
      const T pdx = kp_drv.value()[ki * 2], pdy = kp_drv.value()[ki * 2 + 1];
      T* o = out.data() + (static_cast<std::size_t>(i) * (k + 1) + j + 1) * hw * 2;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const T ux = grid_coord<T>(x, w) - pdx, uy = grid_coord<T>(y, h) - pdy;
          o[(y * w + x) * 2] = psx + a[0] * ux + a[1] * uy;
          o[(y * w + x) * 2 + 1] = psy + a[2] * ux + a[3] * uy;
        }
    }
  }
  return make_op<T>(std::move(out), {kp_src, jac_src, kp_drv, jac_drv}, [n, k, h, w, hw, min_det, affine](Node<T>& s) {
    auto* g_ps = grad_of(s, 0);
    auto* g_js = grad_of(s, 1);
    auto* g_pd = grad_of(s, 2);
    auto* g_jd = grad_of(s, 3);
    const auto& pd = s.parents[2]->value;
    const auto& jsv = s.parents[1]->value;
    const auto& jdv = s.parents[3]->value;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        const std::size_t ki = static_cast<std::size_t>(i) * k + j;
        const T* go = s.grad.data() + (static_cast<std::size_t>(i) * (k + 1) + j + 1) * hw * 2;
        const auto& a = affine[ki];
        const T pdx = pd[ki * 2], pdy = pd[ki * 2 + 1];
        T sgx = 0, sgy = 0;
        std::array<T, 4> ga{};  // dL/dA
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const T gx = go[(y * w + x) * 2], gy = go[(y * w + x) * 2 + 1];
            const T ux = grid_coord<T>(x, w) - pdx, uy = grid_coord<T>(y, h) - pdy;
            sgx += gx;
            sgy += gy;
            ga[0] += gx * ux;
            ga[1] += gx * uy;
            ga[2] += gy * ux;
            ga[3] += gy * uy;
          }
        if (g_ps) {
          (*g_ps)[ki * 2] += sgx;
          (*g_ps)[ki * 2 + 1] += sgy;
        }
        if (g_pd) {
          (*g_pd)[ki * 2] -= a[0] * sgx + a[2] * sgy;
          (*g_pd)[ki * 2 + 1] -= a[1] * sgx + a[3] * sgy;
        }
        if (!g_js && !g_jd) continue;
        const T* dm = jdv.data() + ki * 4;
        auto inv = clamped_inverse2(dm, min_det);
        const auto& iv = inv.inv;
        if (g_js) {  // dS = dA * inv^T
          (*g_js)[ki * 4 + 0] += ga[0] * iv[0] + ga[1] * iv[1];
          (*g_js)[ki * 4 + 1] += ga[0] * iv[2] + ga[1] * iv[3];
          (*g_js)[ki * 4 + 2] += ga[2] * iv[0] + ga[3] * iv[1];
          (*g_js)[ki * 4 + 3] += ga[2] * iv[2] + ga[3] * iv[3];
        }
        if (g_jd) {
          const T* sm = jsv.data() + ki * 4;
          // dInv = S^T dA
          const std::array<T, 4> gi = {sm[0] * ga[0] + sm[2] * ga[2], sm[0] * ga[1] + sm[2] * ga[3],
                                       sm[1] * ga[0] + sm[3] * ga[2], sm[1] * ga[1] + sm[3] * ga[3]};
          // inv = adj(D) / det_used, adj = [d -b; -c a]
          const T dc = inv.det_used;
          T* gd = g_jd->data() + ki * 4;
          gd[3] += gi[0] / dc;
          gd[1] -= gi[1] / dc;
          gd[2] -= gi[2] / dc;
          gd[0] += gi[3] / dc;
          if (!inv.clamped) {
            const std::array<T, 4> adj = {dm[3], -dm[1], -dm[2], dm[0]};
            T gdet = 0;
            for (int q = 0; q < 4; ++q) gdet -= gi[q] * adj[q] / (dc * dc);
            gd[0] += gdet * dm[3];
            gd[3] += gdet * dm[0];
            gd[1] -= gdet * dm[2];
            gd[2] -= gdet * dm[1];
          }
        }
      }
  });
}

// Bilinear sampling with border clamping. x: (N, C, H, W); grid: (N*M, Ho, Wo, 2)
// in normalized coordinates; output b reads input b / M.
template <typename T>
Var<T> grid_sample(const Var<T>& x, const Var<T>& grid, int m = 1) {
  const auto& xs = x.shape();
  const auto& gs = grid.shape();
  require(xs.size() == 4 && gs.size() == 4 && gs[3] == 2, "grid_sample: expected NCHW input and (B, H, W, 2) grid");
  require(gs[0] == xs[0] * m, "grid_sample: grid batch must equal input batch times repeat");
  const int c = xs[1], h = xs[2], w = xs[3], b = gs[0], ho = gs[1], wo = gs[2];
  const std::size_t hw = static_cast<std::size_t>(h) * w, hwo = static_cast<std::size_t>(ho) * wo;
  Tensor<T> out({b, c, ho, wo});
  for (int bi = 0; bi < b; ++bi) {
    const T* src = x.value().data() + static_cast<std::size_t>(bi / m) * c * hw;
    const T* gp = grid.value().data() + static_cast<std::size_t>(bi) * hwo * 2;
    T* dst = out.data() + static_cast<std::size_t>(bi) * c * hwo;
    for (std::size_t q = 0; q < hwo; ++q) {
      const T ix = std::clamp((gp[q * 2] + 1) * T(0.5) * T(w - 1), T(0), T(w - 1));
      const T iy = std::clamp((gp[q * 2 + 1] + 1) * T(0.5) * T(h - 1), T(0), T(h - 1));
      const int x0 = std::min(static_cast<int>(ix), w - 1), y0 = std::min(static_cast<int>(iy), h - 1);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const T fx = ix - T(x0), fy = iy - T(y0);
      for (int ch = 0; ch < c; ++ch) {
        const T* p = src + ch * hw;
        dst[ch * hwo + q] = (p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx) * (1 - fy) +
                            (p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx) * fy;
      }
    }
  }
  return make_op<T>(std::move(out), {x, grid}, [c, h, w, b, m, hw, hwo](Node<T>& s) {
    auto* gx = grad_of(s, 0);
    auto* gg = grad_of(s, 1);
    const auto& xv = s.parents[0]->value;
    const auto& gv = s.parents[1]->value;
    for (int bi = 0; bi < b; ++bi) {
      const T* src = xv.data() + static_cast<std::size_t>(bi / m) * c * hw;
      const T* gp = gv.data() + static_cast<std::size_t>(bi) * hwo * 2;
      const T* go = s.grad.data() + static_cast<std::size_t>(bi) * c * hwo;
      for (std::size_t q = 0; q < hwo; ++q) {
        const T rx = (gp[q * 2] + 1) * T(0.5) * T(w - 1);
        const T ry = (gp[q * 2 + 1] + 1) * T(0.5) * T(h - 1);
        const T ix = std::clamp(rx, T(0), T(w - 1));
        const T iy = std::clamp(ry, T(0), T(h - 1));
        const int x0 = std::min(static_cast<int>(ix), w - 1), y0 = std::min(static_cast<int>(iy), h - 1);
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const T fx = ix - T(x0), fy = iy - T(y0);
        T dfx = 0, dfy = 0;
        for (int ch = 0; ch < c; ++ch) {
          const T g = go[ch * hwo + q];
          if (g == T(0)) continue;
          const T* p = src + ch * hw;
          if (gx) {
            T* d = gx->data() + static_cast<std::size_t>(bi / m) * c * hw + ch * hw;
            d[y0 * w + x0] += g * (1 - fx) * (1 - fy);
            d[y0 * w + x1] += g * fx * (1 - fy);
            d[y1 * w + x0] += g * (1 - fx) * fy;
            d[y1 * w + x1] += g * fx * fy;
          }
          if (gg) {
            dfx += g * ((p[y0 * w + x1] - p[y0 * w + x0]) * (1 - fy) + (p[y1 * w + x1] - p[y1 * w + x0]) * fy);
            dfy += g * ((p[y1 * w + x0] - p[y0 * w + x0]) * (1 - fx) + (p[y1 * w + x1] - p[y0 * w + x1]) * fx);
          }
        }
        if (gg) {
          T* d = gg->data() + static_cast<std::size_t>(bi) * hwo * 2;
          if (rx > T(0) && rx < T(w - 1)) d[q * 2] += dfx * T(0.5) * T(w - 1);
          if (ry > T(0) && ry < T(h - 1)) d[q * 2 + 1] += dfy * T(0.5) * T(h - 1);
        }
      }
    }
  });
}

// flow[n, y, x] = sum_m mask[n, m, y, x] * grids[n, m, y, x]
// mask: (N, M, H, W); grids: (N, M, H, W, 2) -> (N, H, W, 2)
template <typename T>
Var<T> combine_flow(const Var<T>& mask, const Var<T>& grids) {
  const auto& ms = mask.shape();
  require(ms.size() == 4, "combine_flow: expected (N, M, H, W) mask");
  require_shape(grids.shape(), {ms[0], ms[1], ms[2], ms[3], 2}, "combine_flow grids");
  const int n = ms[0], mm = ms[1];
  const std::size_t hw = static_cast<std::size_t>(ms[2]) * ms[3];
  Tensor<T> out({n, ms[2], ms[3], 2});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < mm; ++j) {
      const T* mk = mask.value().data() + (static_cast<std::size_t>(i) * mm + j) * hw;
      const T* gr = grids.value().data() + (static_cast<std::size_t>(i) * mm + j) * hw * 2;
      T* o = out.data() + static_cast<std::size_t>(i) * hw * 2;
      for (std::size_t q = 0; q < hw; ++q) {
        o[q * 2] += mk[q] * gr[q * 2];
        o[q * 2 + 1] += mk[q] * gr[q * 2 + 1];
      }
    }
  return make_op<T>(std::move(out), {mask, grids}, [n, mm, hw](Node<T>& s) {
    auto* gm = grad_of(s, 0);
    auto* gg = grad_of(s, 1);
    const auto& mv = s.parents[0]->value;
    const auto& gv = s.parents[1]->value;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < mm; ++j) {
        const std::size_t mo = (static_cast<std::size_t>(i) * mm + j) * hw;
        const T* go = s.grad.data() + static_cast<std::size_t>(i) * hw * 2;
        for (std::size_t q = 0; q < hw; ++q) {
          if (gm) (*gm)[mo + q] += go[q * 2] * gv[(mo + q) * 2] + go[q * 2 + 1] * gv[(mo + q) * 2 + 1];
          if (gg) {
            (*gg)[(mo + q) * 2] += go[q * 2] * mv[mo + q];
            (*gg)[(mo + q) * 2 + 1] += go[q * 2 + 1] * mv[mo + q];
          }
        }
      }
  });
}

// ---------------------------------------------------------------- losses

// mean over elements of softplus(x) - t * x, i.e. binary cross-entropy on logits.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, T target) {
  const auto& x = logits.value();
  T acc = 0;
  for (T v : x.vec()) acc += (v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v))) - target * v;
  const T inv_n = T(1) / T(x.size());
  return make_op<T>(Tensor<T>({1}, acc * inv_n), {logits}, [target, inv_n](Node<T>& s) {
    auto* g = grad_of(s, 0);
    if (!g) return;
    const auto& xv = s.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-xv[i]));
      (*g)[i] += s.grad[0] * inv_n * (sig - target);
    }
  });
}

}  // namespace maa::ad
