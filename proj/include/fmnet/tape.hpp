#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fmnet/errors.hpp"
#include "fmnet/tensor.hpp"

namespace fmnet {

template <class T>
using GradientMap = std::map<std::string, Tensor<T>>;

enum class ResampleMode { Nearest, Bilinear };

inline ResampleMode resample_mode_from_string(const std::string& s) {
  if (s == "nearest") return ResampleMode::Nearest;
  if (s == "bilinear") return ResampleMode::Bilinear;
  throw ConfigError("unknown resample mode: " + s);
}

// Reverse-mode tape. Values are computed eagerly; each op records a pull
// closure that scatters the output gradient into its inputs. One tape per
// forward/backward pass; parameters are registered as named leaves.
template <class T>
class Tape {
 public:
  struct Ref {
    std::uint32_t idx = 0;
  };

  Ref constant(Tensor<T> v) { return push(std::move(v)); }

  Ref param(const std::string& name, const Tensor<T>& v) {
    if (param_index_.count(name))
      throw ConfigError("parameter registered twice on one tape: " + name);
    Ref r = push(v);
    nodes_[r.idx].param_name = name;
    param_index_[name] = r.idx;
    return r;
  }

  const Tensor<T>& val(Ref r) const { return nodes_[r.idx].value; }
  Tensor<T>& grad_of(Ref r) { return nodes_[r.idx].grad; }

  T scalar(Ref r) const {
    const Tensor<T>& v = val(r);
    if (v.numel() != 1) throw UsageError("scalar() on non-scalar tensor " + shape_str(v.shape));
    return v.data[0];
  }

  // --- ops -----------------------------------------------------------

  Ref conv2d(Ref x, Ref k, std::size_t stride, std::size_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& kv = val(k);
    if (xv.ndim() != 3 || kv.ndim() != 4)
      throw ConfigError("conv2d expects HxWxC input and khxkwxCixCo kernel");
    const std::size_t h = xv.shape[0], w = xv.shape[1], ci = xv.shape[2];
    const std::size_t kh = kv.shape[0], kw = kv.shape[1], co = kv.shape[3];
    if (kv.shape[2] != ci)
      throw ConfigError("conv2d channel mismatch: input " + shape_str(xv.shape) +
                        " kernel " + shape_str(kv.shape));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (kh > h + 2 * pad || kw > w + 2 * pad)
      throw ConfigError("conv2d kernel larger than padded input");
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    Tensor<T> out({ho, wo, co});
    conv2d_forward(xv, kv, out, stride, pad);
    Ref r = push(std::move(out));
    record(r, [this, x, k, r, stride, pad]() {
      conv2d_backward(val(x), val(k), grad_of(r), grad_of(x), grad_of(k), stride, pad);
    });
    return r;
  }

  // Temporal stride is fixed to 1 with zero padding of (kt-1)/2 so the
  // sequence length never shrinks.
  Ref conv3d(Ref x, Ref k, std::size_t stride, std::size_t pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& kv = val(k);
    if (xv.ndim() != 4 || kv.ndim() != 5)
      throw ConfigError("conv3d expects TxHxWxC input and ktxkhxkwxCixCo kernel");
    const std::size_t ci = xv.shape[3];
    const std::size_t kt = kv.shape[0], kh = kv.shape[1], kw = kv.shape[2], co = kv.shape[4];
    if (kt % 2 == 0) throw ConfigError("conv3d temporal kernel size must be odd");
    if (kv.shape[3] != ci)
      throw ConfigError("conv3d channel mismatch: input " + shape_str(xv.shape) +
                        " kernel " + shape_str(kv.shape));
    if (kh > xv.shape[1] + 2 * pad || kw > xv.shape[2] + 2 * pad)
      throw ConfigError("conv3d kernel larger than padded input");
    const std::size_t ho = (xv.shape[1] + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (xv.shape[2] + 2 * pad - kw) / stride + 1;
    Tensor<T> out({xv.shape[0], ho, wo, co});
    conv3d_forward(xv, kv, out, stride, pad);
    Ref r = push(std::move(out));
    record(r, [this, x, k, r, stride, pad]() {
      conv3d_backward(val(x), val(k), grad_of(r), grad_of(x), grad_of(k), stride, pad);
    });
    return r;
  }

  Ref dense(Ref x, Ref w, Ref b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    if (xv.ndim() != 1 || wv.ndim() != 2 || bv.ndim() != 1 || wv.shape[0] != xv.shape[0] ||
        wv.shape[1] != bv.shape[0])
      throw ConfigError("dense shape mismatch: x " + shape_str(xv.shape) + " w " +
                        shape_str(wv.shape) + " b " + shape_str(bv.shape));
    const std::size_t n = xv.shape[0], m = wv.shape[1];
    Tensor<T> out({m});
    for (std::size_t j = 0; j < m; ++j) out[j] = bv[j];
    for (std::size_t i = 0; i < n; ++i) {
      const T xi = xv[i];
      const T* wrow = wv.ptr() + i * m;
      T* o = out.ptr();
      for (std::size_t j = 0; j < m; ++j) o[j] += xi * wrow[j];
    }
    Ref r = push(std::move(out));
    record(r, [this, x, w, b, r, n, m]() {
      const Tensor<T>& g = grad_of(r);
      const Tensor<T>& xv2 = val(x);
      const Tensor<T>& wv2 = val(w);
      Tensor<T>& gx = grad_of(x);
      Tensor<T>& gw = grad_of(w);
      Tensor<T>& gb = grad_of(b);
      for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
      for (std::size_t i = 0; i < n; ++i) {
        const T* wrow = wv2.ptr() + i * m;
        T* gwrow = gw.ptr() + i * m;
        T acc = 0;
        const T xi = xv2[i];
        for (std::size_t j = 0; j < m; ++j) {
          acc += g[j] * wrow[j];
          gwrow[j] += xi * g[j];
        }
        gx[i] += acc;
      }
    });
    return r;
  }

  Ref relu(Ref x) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    Ref r = push(std::move(out));
    record(r, [this, x, r]() {
      const Tensor<T>& xv = val(x);
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (xv[i] > T(0)) gx[i] += g[i];
    });
    return r;
  }

  Ref tanh_(Ref x) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v = std::tanh(v);
    Ref r = push(std::move(out));
    record(r, [this, x, r]() {
      const Tensor<T>& yv = val(r);
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (T(1) - yv[i] * yv[i]);
    });
    return r;
  }

  Ref sigmoid(Ref x) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    Ref r = push(std::move(out));
    record(r, [this, x, r]() {
      const Tensor<T>& yv = val(r);
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * yv[i] * (T(1) - yv[i]);
    });
    return r;
  }

  Ref add(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv))
      throw ConfigError("add shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    Ref r = push(std::move(out));
    record(r, [this, a, b, r]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& ga = grad_of(a);
      Tensor<T>& gb = grad_of(b);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
    return r;
  }

  Ref mul(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv))
      throw ConfigError("mul shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    Ref r = push(std::move(out));
    record(r, [this, a, b, r]() {
      const Tensor<T>& g = grad_of(r);
      const Tensor<T>& av2 = val(a);
      const Tensor<T>& bv2 = val(b);
      Tensor<T>& ga = grad_of(a);
      Tensor<T>& gb = grad_of(b);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i] * bv2[i];
        gb[i] += g[i] * av2[i];
      }
    });
    return r;
  }

  Ref scale(Ref x, T c) {
    Tensor<T> out = val(x);
    for (T& v : out.data) v *= c;
    Ref r = push(std::move(out));
    record(r, [this, x, r, c]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c;
    });
    return r;
  }

  Ref sum(Ref x) {
    T acc = 0;
    for (T v : val(x).data) acc += v;
    Ref r = push(Tensor<T>({1}, std::vector<T>{acc}));
    record(r, [this, x, r]() {
      const T g = grad_of(r)[0];
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
    return r;
  }

  // Mean squared difference over all elements.
  Ref mse(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv))
      throw ConfigError("mse shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    if (av.numel() == 0) throw UsageError("mse on empty tensors");
    T acc = 0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
      const T d = av[i] - bv[i];
      acc += d * d;
    }
    acc /= static_cast<T>(av.numel());
    Ref r = push(Tensor<T>({1}, std::vector<T>{acc}));
    record(r, [this, a, b, r]() {
      const T g = grad_of(r)[0];
      const Tensor<T>& av2 = val(a);
      const Tensor<T>& bv2 = val(b);
      Tensor<T>& ga = grad_of(a);
      Tensor<T>& gb = grad_of(b);
      const T c = T(2) * g / static_cast<T>(av2.numel());
      for (std::size_t i = 0; i < av2.numel(); ++i) {
        const T d = c * (av2[i] - bv2[i]);
        ga[i] += d;
        gb[i] -= d;
      }
    });
    return r;
  }

  // Channel-group average: output channel m = mean of input channels
  // [m*g, (m+1)*g). Works on any tensor whose last axis is channels.
  Ref avg_pool_channels(Ref x, std::size_t g) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() < 1) throw ConfigError("avg_pool_channels needs a channel axis");
    const std::size_t c = xv.shape.back();
    if (g == 0 || c % g != 0)
      throw ConfigError("avg_pool_channels group " + std::to_string(g) +
                        " does not divide channel count " + std::to_string(c));
    Shape os = xv.shape;
    os.back() = c / g;
    const std::size_t co = c / g;
    const std::size_t outer = xv.numel() / c;
    Tensor<T> out(os);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = xv.ptr() + o * c;
      T* dst = out.ptr() + o * co;
      for (std::size_t m = 0; m < co; ++m) {
        T acc = 0;
        for (std::size_t i = 0; i < g; ++i) acc += src[m * g + i];
        dst[m] = acc / static_cast<T>(g);
      }
    }
    Ref r = push(std::move(out));
    record(r, [this, x, r, g, c, co, outer]() {
      const Tensor<T>& gr = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      const T inv = T(1) / static_cast<T>(g);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* gsrc = gr.ptr() + o * co;
        T* gdst = gx.ptr() + o * c;
        for (std::size_t m = 0; m < co; ++m)
          for (std::size_t i = 0; i < g; ++i) gdst[m * g + i] += gsrc[m] * inv;
      }
    });
    return r;
  }

  // Channel-independent spatial interpolation on HxWxC tensors. Identity
  // (exact copy) when target dims equal source dims.
  Ref resample(Ref x, std::size_t th, std::size_t tw, ResampleMode mode) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() != 3) throw ConfigError("resample expects HxWxC input");
    if (th < 1 || tw < 1) throw ConfigError("resample target dims must be >= 1");
    const std::size_t h = xv.shape[0], w = xv.shape[1], c = xv.shape[2];
    if (th == h && tw == w) {
      Ref r = push(xv);
      record(r, [this, x, r]() {
        const Tensor<T>& g = grad_of(r);
        Tensor<T>& gx = grad_of(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
      });
      return r;
    }
    // Half-pixel-center source coordinates; linear in the input values, so
    // both modes have exact gradients (a fixed scatter pattern).
    struct Lerp {
      std::size_t i0, i1;
      T f;
    };
    auto axis_map = [&](std::size_t src, std::size_t dst, std::vector<Lerp>& m) {
      m.resize(dst);
      for (std::size_t o = 0; o < dst; ++o) {
        double s = (static_cast<double>(o) + 0.5) * static_cast<double>(src) /
                       static_cast<double>(dst) -
                   0.5;
        s = std::min(std::max(s, 0.0), static_cast<double>(src - 1));
        if (mode == ResampleMode::Nearest) {
          m[o] = {static_cast<std::size_t>(std::llround(s)), 0, T(0)};
          m[o].i1 = m[o].i0;
        } else {
          const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
          const std::size_t i1 = std::min(i0 + 1, src - 1);
          m[o] = {i0, i1, static_cast<T>(s - static_cast<double>(i0))};
        }
      }
    };
    auto ymap = std::make_shared<std::vector<Lerp>>();
    auto xmap = std::make_shared<std::vector<Lerp>>();
    axis_map(h, th, *ymap);
    axis_map(w, tw, *xmap);
    Tensor<T> out({th, tw, c});
    for (std::size_t oy = 0; oy < th; ++oy) {
      const Lerp& ly = (*ymap)[oy];
      for (std::size_t ox = 0; ox < tw; ++ox) {
        const Lerp& lx = (*xmap)[ox];
        T* dst = out.ptr() + (oy * tw + ox) * c;
        const T* p00 = xv.ptr() + (ly.i0 * w + lx.i0) * c;
        if (mode == ResampleMode::Nearest) {
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = p00[ch];
        } else {
          const T* p01 = xv.ptr() + (ly.i0 * w + lx.i1) * c;
          const T* p10 = xv.ptr() + (ly.i1 * w + lx.i0) * c;
          const T* p11 = xv.ptr() + (ly.i1 * w + lx.i1) * c;
          const T wy = ly.f, wx = lx.f;
          for (std::size_t ch = 0; ch < c; ++ch)
            dst[ch] = (T(1) - wy) * ((T(1) - wx) * p00[ch] + wx * p01[ch]) +
                      wy * ((T(1) - wx) * p10[ch] + wx * p11[ch]);
        }
      }
    }
    Ref r = push(std::move(out));
    record(r, [this, x, r, ymap, xmap, mode, th, tw, w, c]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t oy = 0; oy < th; ++oy) {
        const Lerp& ly = (*ymap)[oy];
        for (std::size_t ox = 0; ox < tw; ++ox) {
          const Lerp& lx = (*xmap)[ox];
          const T* gsrc = g.ptr() + (oy * tw + ox) * c;
          if (mode == ResampleMode::Nearest) {
            T* d = gx.ptr() + (ly.i0 * w + lx.i0) * c;
            for (std::size_t ch = 0; ch < c; ++ch) d[ch] += gsrc[ch];
          } else {
            const T wy = ly.f, wx = lx.f;
            T* d00 = gx.ptr() + (ly.i0 * w + lx.i0) * c;
            T* d01 = gx.ptr() + (ly.i0 * w + lx.i1) * c;
            T* d10 = gx.ptr() + (ly.i1 * w + lx.i0) * c;
            T* d11 = gx.ptr() + (ly.i1 * w + lx.i1) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              d00[ch] += (T(1) - wy) * (T(1) - wx) * gsrc[ch];
              d01[ch] += (T(1) - wy) * wx * gsrc[ch];
              d10[ch] += wy * (T(1) - wx) * gsrc[ch];
              d11[ch] += wy * wx * gsrc[ch];
            }
          }
        }
      }
    });
    return r;
  }

  // f x f mean pooling over the spatial axes of a TxHxWxC tensor.
  Ref spatial_avg_pool(Ref x, std::size_t f) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() != 4) throw ConfigError("spatial_avg_pool expects TxHxWxC input");
    const std::size_t t = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3];
    if (f == 0 || h % f != 0 || w % f != 0)
      throw ConfigError("spatial_avg_pool factor must divide spatial dims");
    const std::size_t ho = h / f, wo = w / f;
    Tensor<T> out({t, ho, wo, c});
    const T inv = T(1) / static_cast<T>(f * f);
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T* dst = out.ptr() + ((ti * ho + oy) * wo + ox) * c;
          for (std::size_t fy = 0; fy < f; ++fy)
            for (std::size_t fx = 0; fx < f; ++fx) {
              const T* src = xv.ptr() + ((ti * h + oy * f + fy) * w + ox * f + fx) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] *= inv;
        }
    Ref r = push(std::move(out));
    record(r, [this, x, r, f, t, h, w, c]() {
      const std::size_t ho = h / f, wo = w / f;
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      const T inv = T(1) / static_cast<T>(f * f);
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const T* gsrc = g.ptr() + ((ti * ho + oy) * wo + ox) * c;
            for (std::size_t fy = 0; fy < f; ++fy)
              for (std::size_t fx = 0; fx < f; ++fx) {
                T* dst = gx.ptr() + ((ti * h + oy * f + fy) * w + ox * f + fx) * c;
                for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += gsrc[ch] * inv;
              }
          }
    });
    return r;
  }

  // TxHxWxC -> TxC mean over the spatial axes.
  Ref global_spatial_mean(Ref x) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() != 4) throw ConfigError("global_spatial_mean expects TxHxWxC input");
    const std::size_t t = xv.shape[0], hw = xv.shape[1] * xv.shape[2], c = xv.shape[3];
    Tensor<T> out({t, c});
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t ti = 0; ti < t; ++ti) {
      T* dst = out.ptr() + ti * c;
      const T* src = xv.ptr() + ti * hw * c;
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[p * c + ch];
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] *= inv;
    }
    Ref r = push(std::move(out));
    record(r, [this, x, r, t, hw, c]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t ti = 0; ti < t; ++ti) {
        const T* gsrc = g.ptr() + ti * c;
        T* dst = gx.ptr() + ti * hw * c;
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) dst[p * c + ch] += gsrc[ch] * inv;
      }
    });
    return r;
  }

  // TxHxWxC -> HxWxC mean over time.
  Ref time_mean(Ref x) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() != 4) throw ConfigError("time_mean expects TxHxWxC input");
    const std::size_t t = xv.shape[0];
    const std::size_t n = xv.numel() / t;
    Tensor<T> out({xv.shape[1], xv.shape[2], xv.shape[3]});
    const T inv = T(1) / static_cast<T>(t);
    for (std::size_t ti = 0; ti < t; ++ti) {
      const T* src = xv.ptr() + ti * n;
      for (std::size_t i = 0; i < n; ++i) out[i] += src[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
    Ref r = push(std::move(out));
    record(r, [this, x, r, t, n]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      const T inv = T(1) / static_cast<T>(t);
      for (std::size_t ti = 0; ti < t; ++ti) {
        T* dst = gx.ptr() + ti * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[i] * inv;
      }
    });
    return r;
  }

  // Row slice of an RxC matrix.
  Ref row(Ref x, std::size_t ri) {
    const Tensor<T>& xv = val(x);
    if (xv.ndim() != 2 || ri >= xv.shape[0]) throw ConfigError("row slice out of range");
    const std::size_t c = xv.shape[1];
    Tensor<T> out({c});
    std::copy(xv.ptr() + ri * c, xv.ptr() + (ri + 1) * c, out.ptr());
    Ref r = push(std::move(out));
    record(r, [this, x, r, ri, c]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < c; ++i) gx[ri * c + i] += g[i];
    });
    return r;
  }

  Ref concat(Ref a, Ref b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.ndim() != 1 || bv.ndim() != 1) throw ConfigError("concat expects vectors");
    Tensor<T> out({av.numel() + bv.numel()});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
    Ref r = push(std::move(out));
    record(r, [this, a, b, r]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& ga = grad_of(a);
      Tensor<T>& gb = grad_of(b);
      const std::size_t na = ga.numel();
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
    });
    return r;
  }

  // Flatten to a vector (pure reshape).
  Ref flatten(Ref x) {
    Tensor<T> out({val(x).numel()}, val(x).data);
    Ref r = push(std::move(out));
    record(r, [this, x, r]() {
      const Tensor<T>& g = grad_of(r);
      Tensor<T>& gx = grad_of(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
    return r;
  }

  // --- backward ------------------------------------------------------

  GradientMap<T> backward(Ref loss) {
    if (val(loss).numel() != 1)
      throw UsageError("backward requires a scalar loss, got " + shape_str(val(loss).shape));
    for (auto& n : nodes_) {
      n.grad = Tensor<T>(n.value.shape);
    }
    nodes_[loss.idx].grad[0] = T(1);
    for (std::size_t i = loss.idx + 1; i-- > 0;) {
      if (nodes_[i].pull) nodes_[i].pull();
    }
    GradientMap<T> grads;
    for (const auto& [name, idx] : param_index_) grads.emplace(name, nodes_[idx].grad);
    return grads;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> pull;
    std::string param_name;
  };

  Ref push(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, {}});
    return Ref{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void record(Ref r, std::function<void()> fn) { nodes_[r.idx].pull = std::move(fn); }

  static void conv2d_forward(const Tensor<T>& x, const Tensor<T>& k, Tensor<T>& out,
                             std::size_t stride, std::size_t pad) {
    const std::size_t h = x.shape[0], w = x.shape[1], ci = x.shape[2];
    const std::size_t kh = k.shape[0], kw = k.shape[1], co = k.shape[3];
    const std::size_t ho = out.shape[0], wo = out.shape[1];
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* dst = out.ptr() + (oy * wo + ox) * co;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const T* src = x.ptr() + (static_cast<std::size_t>(iy) * w +
                                      static_cast<std::size_t>(ix)) * ci;
            const T* kk = k.ptr() + (ky * kw + kx) * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const T xv = src[c];
              const T* krow = kk + c * co;
              for (std::size_t o = 0; o < co; ++o) dst[o] += xv * krow[o];
            }
          }
        }
      }
  }

  static void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gout,
                              Tensor<T>& gx, Tensor<T>& gk, std::size_t stride,
                              std::size_t pad) {
    const std::size_t h = x.shape[0], w = x.shape[1], ci = x.shape[2];
    const std::size_t kh = k.shape[0], kw = k.shape[1], co = k.shape[3];
    const std::size_t ho = gout.shape[0], wo = gout.shape[1];
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T* g = gout.ptr() + (oy * wo + ox) * co;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t xoff = (static_cast<std::size_t>(iy) * w +
                                      static_cast<std::size_t>(ix)) * ci;
            const std::size_t koff = (ky * kw + kx) * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const T xv = x.ptr()[xoff + c];
              const T* krow = k.ptr() + koff + c * co;
              T* gkrow = gk.ptr() + koff + c * co;
              T acc = 0;
              for (std::size_t o = 0; o < co; ++o) {
                acc += g[o] * krow[o];
                gkrow[o] += g[o] * xv;
              }
              gx.ptr()[xoff + c] += acc;
            }
          }
        }
      }
  }

  static void conv3d_forward(const Tensor<T>& x, const Tensor<T>& k, Tensor<T>& out,
                             std::size_t stride, std::size_t pad) {
    const std::size_t tt = x.shape[0], h = x.shape[1], w = x.shape[2], ci = x.shape[3];
    const std::size_t kt = k.shape[0], kh = k.shape[1], kw = k.shape[2], co = k.shape[4];
    const std::size_t ho = out.shape[1], wo = out.shape[2];
    const std::ptrdiff_t tpad = static_cast<std::ptrdiff_t>((kt - 1) / 2);
    for (std::size_t ot = 0; ot < tt; ++ot)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T* dst = out.ptr() + ((ot * ho + oy) * wo + ox) * co;
          for (std::size_t ktt = 0; ktt < kt; ++ktt) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot + ktt) - tpad;
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(tt)) continue;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const T* src = x.ptr() + ((static_cast<std::size_t>(it) * h +
                                           static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ix)) * ci;
                const T* kk = k.ptr() + ((ktt * kh + ky) * kw + kx) * ci * co;
                for (std::size_t c = 0; c < ci; ++c) {
                  const T xv = src[c];
                  const T* krow = kk + c * co;
                  for (std::size_t o = 0; o < co; ++o) dst[o] += xv * krow[o];
                }
              }
            }
          }
        }
  }

  static void conv3d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gout,
                              Tensor<T>& gx, Tensor<T>& gk, std::size_t stride,
                              std::size_t pad) {
    const std::size_t tt = x.shape[0], h = x.shape[1], w = x.shape[2], ci = x.shape[3];
    const std::size_t kt = k.shape[0], kh = k.shape[1], kw = k.shape[2], co = k.shape[4];
    const std::size_t ho = gout.shape[1], wo = gout.shape[2];
    const std::ptrdiff_t tpad = static_cast<std::ptrdiff_t>((kt - 1) / 2);
    for (std::size_t ot = 0; ot < tt; ++ot)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T* g = gout.ptr() + ((ot * ho + oy) * wo + ox) * co;
          for (std::size_t ktt = 0; ktt < kt; ++ktt) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot + ktt) - tpad;
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(tt)) continue;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t xoff = ((static_cast<std::size_t>(it) * h +
                                           static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ix)) * ci;
                const std::size_t koff = ((ktt * kh + ky) * kw + kx) * ci * co;
                for (std::size_t c = 0; c < ci; ++c) {
                  const T xv = x.ptr()[xoff + c];
                  const T* krow = k.ptr() + koff + c * co;
                  T* gkrow = gk.ptr() + koff + c * co;
                  T acc = 0;
                  for (std::size_t o = 0; o < co; ++o) {
                    acc += g[o] * krow[o];
                    gkrow[o] += g[o] * xv;
                  }
                  gx.ptr()[xoff + c] += acc;
                }
              }
            }
          }
        }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::uint32_t> param_index_;
};

}  // namespace fmnet
