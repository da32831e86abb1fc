#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "stada/core/error.hpp"

namespace stada {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = MatRM<double>;

/// Dense NCHW tensor. The toolkit's only array type: batches of images and
/// activations both live here. Row-major within each plane, so flattening a
/// (h, w) plane to positions is deterministic.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  T* plane(int i, int j) { return v.data() + (static_cast<std::size_t>(i) * c + j) * h * w; }
  const T* plane(int i, int j) const {
    return v.data() + (static_cast<std::size_t>(i) * c + j) * h * w;
  }

  T& at(int i, int j, int y, int x) { return plane(i, j)[static_cast<std::size_t>(y) * w + x]; }
  T at(int i, int j, int y, int x) const {
    return plane(i, j)[static_cast<std::size_t>(y) * w + x];
  }

  /// Channels-by-positions view of one batch element: (c, h*w).
  Eigen::Map<MatRM<T>> chans(int i) {
    return Eigen::Map<MatRM<T>>(plane(i, 0), c, static_cast<Eigen::Index>(h) * w);
  }
  Eigen::Map<const MatRM<T>> chans(int i) const {
    return Eigen::Map<const MatRM<T>>(plane(i, 0), c, static_cast<Eigen::Index>(h) * w);
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  Tensor4 slice(int i) const {
    Tensor4 out(1, c, h, w);
    std::copy(plane(i, 0), plane(i, 0) + static_cast<std::size_t>(c) * h * w, out.v.begin());
    return out;
  }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

enum class ValueRange { byte_0_255, unit_0_1 };
enum class ColorSpace { rgb, bgr };

/// Batched image data plus the metadata needed to interpret it. Everything in
/// the pipeline runs on byte-range RGB; the fields exist so serialized
/// artifacts are self-describing and conversions are explicit.
template <typename T>
struct ImageTensorT {
  Tensor4<T> data;  // (n, 3, h, w)
  ValueRange range = ValueRange::byte_0_255;
  ColorSpace color = ColorSpace::rgb;

  ImageTensorT() = default;
  explicit ImageTensorT(Tensor4<T> t, ValueRange r = ValueRange::byte_0_255,
                        ColorSpace c = ColorSpace::rgb)
      : data(std::move(t)), range(r), color(c) {}

  int batch() const { return data.n; }
  int height() const { return data.h; }
  int width() const { return data.w; }
};

using ImageTensor = ImageTensorT<float>;

}  // namespace stada
