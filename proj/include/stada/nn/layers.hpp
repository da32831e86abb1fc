#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "stada/core/error.hpp"
#include "stada/core/rng.hpp"
#include "stada/core/tensor.hpp"

namespace stada::nn {

enum class PadMode { zero, reflect };

/// Reflect index i into [0, n) without repeating the border sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

template <typename T>
Tensor4<T> pad2d(const Tensor4<T>& x, int pad, PadMode mode) {
  if (pad == 0) return x;
  if (mode == PadMode::reflect)
    require(x.h > pad && x.w > pad, "reflection pad " + std::to_string(pad) +
                                        " needs spatial size > pad, got " + std::to_string(x.h) +
                                        "x" + std::to_string(x.w));
  Tensor4<T> out(x.n, x.c, x.h + 2 * pad, x.w + 2 * pad);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const T* src = x.plane(i, j);
      T* dst = out.plane(i, j);
      for (int y = 0; y < out.h; ++y) {
        int sy = y - pad;
        bool in_y = sy >= 0 && sy < x.h;
        for (int xx = 0; xx < out.w; ++xx) {
          int sx = xx - pad;
          T v;
          if (in_y && sx >= 0 && sx < x.w) {
            v = src[sy * x.w + sx];
          } else if (mode == PadMode::zero) {
            v = T(0);
          } else {
            v = src[reflect_index(sy, x.h) * x.w + reflect_index(sx, x.w)];
          }
          dst[y * out.w + xx] = v;
        }
      }
    }
  return out;
}

/// Scatter a padded-gradient tensor back onto the unpadded input. Zero padding
/// crops; reflection padding folds border gradients onto their source pixels.
template <typename T>
Tensor4<T> unpad2d_grad(const Tensor4<T>& gpad, int pad, PadMode mode, int h, int w) {
  if (pad == 0) return gpad;
  Tensor4<T> g(gpad.n, gpad.c, h, w);
  for (int i = 0; i < gpad.n; ++i)
    for (int j = 0; j < gpad.c; ++j) {
      const T* src = gpad.plane(i, j);
      T* dst = g.plane(i, j);
      for (int y = 0; y < gpad.h; ++y) {
        int sy = y - pad;
        for (int xx = 0; xx < gpad.w; ++xx) {
          int sx = xx - pad;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            dst[sy * w + sx] += src[y * gpad.w + xx];
          } else if (mode == PadMode::reflect) {
            dst[reflect_index(sy, h) * w + reflect_index(sx, w)] += src[y * gpad.w + xx];
          }
        }
      }
    }
  return g;
}

template <typename T>
struct Conv2dCtx {
  Tensor4<T> xpad;
  int in_h = 0, in_w = 0;
};

/// 2D convolution, im2col + GEMM. Weight layout: (out_c, in_c * k * k),
/// row-major, kernel elements in (ky, kx) order.
template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 3, stride = 1;
  PadMode pad_mode = PadMode::reflect;
  std::vector<T> w, b;

  Conv2d() = default;
  Conv2d(int in_c_, int out_c_, int k_, int stride_, PadMode pm)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad_mode(pm),
        w(static_cast<std::size_t>(out_c_) * in_c_ * k_ * k_, T(0)), b(out_c_, T(0)) {}

  int pad() const { return (k - 1) / 2; }
  int out_size(int s) const { return (s + 2 * pad() - k) / stride + 1; }

  void init_he_uniform(Rng& rng) {
    double limit = std::sqrt(6.0 / (static_cast<double>(in_c) * k * k));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(b.begin(), b.end(), T(0));
  }

  void im2col(const Tensor4<T>& xpad, int item, int oh, int ow, std::vector<T>& col) const {
    const int kk = k * k;
    col.resize(static_cast<std::size_t>(in_c) * kk * oh * ow);
    for (int c = 0; c < in_c; ++c) {
      const T* src = xpad.plane(item, c);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* dst = col.data() + (static_cast<std::size_t>(c) * kk + ky * k + kx) *
                                    (static_cast<std::size_t>(oh) * ow);
          for (int oy = 0; oy < oh; ++oy) {
            const T* row = src + (oy * stride + ky) * xpad.w + kx;
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = row[ox * stride];
          }
        }
    }
  }

  Tensor4<T> forward(const Tensor4<T>& x, Conv2dCtx<T>* ctx = nullptr) const {
    require(x.c == in_c, "conv: expected " + std::to_string(in_c) + " input channels, got " +
                             std::to_string(x.c));
    Tensor4<T> xpad = pad2d(x, pad(), pad_mode);
    const int oh = out_size(x.h), ow = out_size(x.w);
    Tensor4<T> y(x.n, out_c, oh, ow);
    Eigen::Map<const MatRM<T>> wm(w.data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
    std::vector<T> col;
    for (int i = 0; i < x.n; ++i) {
      im2col(xpad, i, oh, ow, col);
      Eigen::Map<const MatRM<T>> cm(col.data(), static_cast<Eigen::Index>(in_c) * k * k,
                                    static_cast<Eigen::Index>(oh) * ow);
      Eigen::Map<MatRM<T>> ym(y.plane(i, 0), out_c, static_cast<Eigen::Index>(oh) * ow);
      ym.noalias() = wm * cm;
      for (int c = 0; c < out_c; ++c) ym.row(c).array() += b[c];
    }
    if (ctx) {
      ctx->in_h = x.h;
      ctx->in_w = x.w;
      ctx->xpad = std::move(xpad);
    }
    return y;
  }

  /// Returns dx; accumulates dw/db when given.
  Tensor4<T> backward(const Tensor4<T>& dy, const Conv2dCtx<T>& ctx, std::vector<T>* dw,
                      std::vector<T>* db) const {
    const int oh = dy.h, ow = dy.w;
    const Eigen::Index kdim = static_cast<Eigen::Index>(in_c) * k * k;
    Eigen::Map<const MatRM<T>> wm(w.data(), out_c, kdim);
    Tensor4<T> dxpad(ctx.xpad.n, ctx.xpad.c, ctx.xpad.h, ctx.xpad.w);
    std::vector<T> col, dcol(static_cast<std::size_t>(kdim) * oh * ow);
    for (int i = 0; i < dy.n; ++i) {
      Eigen::Map<const MatRM<T>> dym(dy.plane(i, 0), out_c, static_cast<Eigen::Index>(oh) * ow);
      if (dw) {
        im2col(ctx.xpad, i, oh, ow, col);
        Eigen::Map<const MatRM<T>> cm(col.data(), kdim, static_cast<Eigen::Index>(oh) * ow);
        Eigen::Map<MatRM<T>> dwm(dw->data(), out_c, kdim);
        dwm.noalias() += dym * cm.transpose();
      }
      if (db)
        for (int c = 0; c < out_c; ++c)
          (*db)[c] += dym.row(c).sum();
      Eigen::Map<MatRM<T>> dcm(dcol.data(), kdim, static_cast<Eigen::Index>(oh) * ow);
      dcm.noalias() = wm.transpose() * dym;
      // col2im accumulate
      const int kk = k * k;
      for (int c = 0; c < in_c; ++c) {
        T* dst = dxpad.plane(i, c);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const T* src = dcol.data() + (static_cast<std::size_t>(c) * kk + ky * k + kx) *
                                             (static_cast<std::size_t>(oh) * ow);
            for (int oy = 0; oy < oh; ++oy) {
              T* row = dst + (oy * stride + ky) * dxpad.w + kx;
              for (int ox = 0; ox < ow; ++ox) row[ox * stride] += src[oy * ow + ox];
            }
          }
      }
    }
    return unpad2d_grad(dxpad, pad(), pad_mode, ctx.in_h, ctx.in_w);
  }
};

template <typename T>
struct InstanceNormCtx {
  Tensor4<T> xhat;
  std::vector<T> inv_std;  // per (n, c)
};

/// Per-instance, per-channel normalization with learnable affine parameters.
template <typename T>
struct InstanceNorm {
  int c = 0;
  T eps = static_cast<T>(1e-5);
  std::vector<T> gamma, beta;

  InstanceNorm() = default;
  explicit InstanceNorm(int c_) : c(c_), gamma(c_, T(1)), beta(c_, T(0)) {}

  Tensor4<T> forward(const Tensor4<T>& x, InstanceNormCtx<T>* ctx = nullptr) const {
    require(x.c == c, "instance norm channel mismatch");
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    Tensor4<T> xhat_store;
    if (ctx) {
      xhat_store = Tensor4<T>(x.n, x.c, x.h, x.w);
      ctx->inv_std.assign(static_cast<std::size_t>(x.n) * x.c, T(0));
    }
    const int m = x.h * x.w;
    for (int i = 0; i < x.n; ++i)
      for (int j = 0; j < x.c; ++j) {
        const T* p = x.plane(i, j);
        double mean = 0;
        for (int s = 0; s < m; ++s) mean += p[s];
        mean /= m;
        double var = 0;
        for (int s = 0; s < m; ++s) {
          double d = p[s] - mean;
          var += d * d;
        }
        var /= m;
        T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        T* yp = y.plane(i, j);
        T* xh = ctx ? xhat_store.plane(i, j) : nullptr;
        for (int s = 0; s < m; ++s) {
          T h = static_cast<T>((p[s] - mean) * istd);
          if (xh) xh[s] = h;
          yp[s] = gamma[j] * h + beta[j];
        }
        if (ctx) ctx->inv_std[static_cast<std::size_t>(i) * x.c + j] = istd;
      }
    if (ctx) ctx->xhat = std::move(xhat_store);
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy, const InstanceNormCtx<T>& ctx, std::vector<T>* dgamma,
                      std::vector<T>* dbeta) const {
    Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
    const int m = dy.h * dy.w;
    for (int i = 0; i < dy.n; ++i)
      for (int j = 0; j < dy.c; ++j) {
        const T* dyp = dy.plane(i, j);
        const T* xh = ctx.xhat.plane(i, j);
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int s = 0; s < m; ++s) {
          sum_dy += dyp[s];
          sum_dy_xhat += static_cast<double>(dyp[s]) * xh[s];
        }
        if (dgamma) (*dgamma)[j] += static_cast<T>(sum_dy_xhat);
        if (dbeta) (*dbeta)[j] += static_cast<T>(sum_dy);
        T istd = ctx.inv_std[static_cast<std::size_t>(i) * dy.c + j];
        double g = gamma[j];
        T* dxp = dx.plane(i, j);
        for (int s = 0; s < m; ++s) {
          double dxhat = static_cast<double>(dyp[s]) * g;
          dxp[s] = static_cast<T>(istd * (dxhat - sum_dy * g / m -
                                          static_cast<double>(xh[s]) * sum_dy_xhat * g / m));
        }
      }
    return dx;
  }
};

template <typename T>
struct ReluCtx {
  std::vector<std::uint8_t> mask;
};

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x, ReluCtx<T>* ctx = nullptr) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  if (ctx) ctx->mask.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    bool pos = x.v[i] > T(0);
    y.v[i] = pos ? x.v[i] : T(0);
    if (ctx) ctx->mask[i] = pos;
  }
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& dy, const ReluCtx<T>& ctx) {
  Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.v[i] = ctx.mask[i] ? dy.v[i] : T(0);
  return dx;
}

template <typename T>
struct MaxPoolCtx {
  std::vector<std::int32_t> argmax;  // flat index into the input plane
  int in_h = 0, in_w = 0;
};

/// 2x2 stride-2 max pooling with ceil semantics: windows are clipped at the
/// border, so the output is exactly (ceil(h/2), ceil(w/2)).
template <typename T>
Tensor4<T> maxpool2_forward(const Tensor4<T>& x, MaxPoolCtx<T>* ctx = nullptr) {
  const int oh = (x.h + 1) / 2, ow = (x.w + 1) / 2;
  Tensor4<T> y(x.n, x.c, oh, ow);
  if (ctx) {
    ctx->argmax.resize(y.size());
    ctx->in_h = x.h;
    ctx->in_w = x.w;
  }
  std::size_t oi = 0;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const T* p = x.plane(i, j);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          int y0 = oy * 2, x0 = ox * 2;
          int best = y0 * x.w + x0;
          T bv = p[best];
          for (int dy = 0; dy < 2 && y0 + dy < x.h; ++dy)
            for (int dx = 0; dx < 2 && x0 + dx < x.w; ++dx) {
              int idx = (y0 + dy) * x.w + (x0 + dx);
              if (p[idx] > bv) {
                bv = p[idx];
                best = idx;
              }
            }
          y.plane(i, j)[oy * ow + ox] = bv;
          if (ctx) ctx->argmax[oi] = best;
        }
    }
  return y;
}

template <typename T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& dy, const MaxPoolCtx<T>& ctx) {
  Tensor4<T> dx(dy.n, dy.c, ctx.in_h, ctx.in_w);
  std::size_t oi = 0;
  for (int i = 0; i < dy.n; ++i)
    for (int j = 0; j < dy.c; ++j) {
      T* dst = dx.plane(i, j);
      const T* src = dy.plane(i, j);
      for (int s = 0; s < dy.h * dy.w; ++s, ++oi) dst[ctx.argmax[oi]] += src[s];
    }
  return dx;
}

template <typename T>
Tensor4<T> upsample_nearest2_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h * 2, x.w * 2);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const T* p = x.plane(i, j);
      T* q = y.plane(i, j);
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) q[yy * y.w + xx] = p[(yy / 2) * x.w + (xx / 2)];
    }
  return y;
}

template <typename T>
Tensor4<T> upsample_nearest2_backward(const Tensor4<T>& dy) {
  Tensor4<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int i = 0; i < dy.n; ++i)
    for (int j = 0; j < dy.c; ++j) {
      const T* p = dy.plane(i, j);
      T* q = dx.plane(i, j);
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) q[(yy / 2) * dx.w + (xx / 2)] += p[yy * dy.w + xx];
    }
  return dx;
}

template <typename T>
struct ScaledTanhCtx {
  Tensor4<T> t;
};

/// out = 127.5 * (tanh(z) + 1): the affine map of tanh onto [0, 255].
template <typename T>
Tensor4<T> scaled_tanh_forward(const Tensor4<T>& x, ScaledTanhCtx<T>* ctx = nullptr) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  if (ctx) ctx->t = Tensor4<T>(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    T t = std::tanh(x.v[i]);
    if (ctx) ctx->t.v[i] = t;
    y.v[i] = static_cast<T>(127.5) * (t + T(1));
  }
  return y;
}

template <typename T>
Tensor4<T> scaled_tanh_backward(const Tensor4<T>& dy, const ScaledTanhCtx<T>& ctx) {
  Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    T t = ctx.t.v[i];
    dx.v[i] = dy.v[i] * static_cast<T>(127.5) * (T(1) - t * t);
  }
  return dx;
}

template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, 1, 1);
  const int m = x.h * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      double acc = 0;
      const T* p = x.plane(i, j);
      for (int s = 0; s < m; ++s) acc += p[s];
      y.at(i, j, 0, 0) = static_cast<T>(acc / m);
    }
  return y;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& dy, int h, int w) {
  Tensor4<T> dx(dy.n, dy.c, h, w);
  const T scale = T(1) / static_cast<T>(h * w);
  for (int i = 0; i < dy.n; ++i)
    for (int j = 0; j < dy.c; ++j) {
      T g = dy.at(i, j, 0, 0) * scale;
      T* p = dx.plane(i, j);
      for (int s = 0; s < h * w; ++s) p[s] = g;
    }
  return dx;
}

template <typename T>
struct LinearCtx {
  Tensor4<T> x;
};

/// Fully connected layer over flattened (c*h*w) features.
template <typename T>
struct Linear {
  int in_f = 0, out_f = 0;
  std::vector<T> w, b;  // w: (out_f, in_f) row-major

  Linear() = default;
  Linear(int in_f_, int out_f_)
      : in_f(in_f_), out_f(out_f_), w(static_cast<std::size_t>(in_f_) * out_f_, T(0)),
        b(out_f_, T(0)) {}

  void init_he_uniform(Rng& rng) {
    double limit = std::sqrt(6.0 / in_f);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(b.begin(), b.end(), T(0));
  }

  Tensor4<T> forward(const Tensor4<T>& x, LinearCtx<T>* ctx = nullptr) const {
    require(x.c * x.h * x.w == in_f, "linear: feature size mismatch");
    Tensor4<T> y(x.n, out_f, 1, 1);
    Eigen::Map<const MatRM<T>> wm(w.data(), out_f, in_f);
    Eigen::Map<const MatRM<T>> xm(x.v.data(), x.n, in_f);
    Eigen::Map<MatRM<T>> ym(y.v.data(), x.n, out_f);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < out_f; ++c) ym(i, c) += b[c];
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy, const LinearCtx<T>& ctx, std::vector<T>* dw,
                      std::vector<T>* db) const {
    Tensor4<T> dx(ctx.x.n, ctx.x.c, ctx.x.h, ctx.x.w);
    Eigen::Map<const MatRM<T>> dym(dy.v.data(), dy.n, out_f);
    Eigen::Map<const MatRM<T>> xm(ctx.x.v.data(), ctx.x.n, in_f);
    Eigen::Map<const MatRM<T>> wm(w.data(), out_f, in_f);
    Eigen::Map<MatRM<T>> dxm(dx.v.data(), dx.n, in_f);
    dxm.noalias() = dym * wm;
    if (dw) {
      Eigen::Map<MatRM<T>> dwm(dw->data(), out_f, in_f);
      dwm.noalias() += dym.transpose() * xm;
    }
    if (db)
      for (int i = 0; i < dy.n; ++i)
        for (int c = 0; c < out_f; ++c) (*db)[c] += dym(i, c);
    return dx;
  }
};

/// Mean softmax cross-entropy over the batch. Returns the loss and writes
/// dloss/dlogits. Loss is accumulated in double.
template <typename T>
double softmax_cross_entropy(const Tensor4<T>& logits, const std::vector<int>& labels,
                             Tensor4<T>* dlogits) {
  require(logits.h == 1 && logits.w == 1, "softmax expects (n, k, 1, 1) logits");
  require(static_cast<std::size_t>(logits.n) == labels.size(), "label count mismatch");
  const int k = logits.c;
  double loss = 0;
  if (dlogits) *dlogits = Tensor4<T>(logits.n, k, 1, 1);
  for (int i = 0; i < logits.n; ++i) {
    const T* p = logits.plane(i, 0);
    double mx = p[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, static_cast<double>(p[c]));
    double denom = 0;
    for (int c = 0; c < k; ++c) denom += std::exp(static_cast<double>(p[c]) - mx);
    double logz = std::log(denom) + mx;
    loss += logz - p[labels[i]];
    if (dlogits) {
      T* d = dlogits->plane(i, 0);
      for (int c = 0; c < k; ++c) {
        double soft = std::exp(static_cast<double>(p[c]) - logz);
        d[c] = static_cast<T>((soft - (c == labels[i] ? 1.0 : 0.0)) / logits.n);
      }
    }
  }
  return loss / logits.n;
}

}  // namespace stada::nn
