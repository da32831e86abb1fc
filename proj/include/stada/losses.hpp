#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stada/core/error.hpp"
#include "stada/core/tensor.hpp"

namespace stada {

/// Per-layer activations of the loss network: one row per filter, one column
/// per spatial position (row-major flattening of the activation plane).
struct FeatureMap {
  MatD data;  // (channels, positions)
  std::string layer_id;

  int channels() const { return static_cast<int>(data.rows()); }
  int positions() const { return static_cast<int>(data.cols()); }
};

/// Channel-correlation matrix of one layer's feature map. Symmetric PSD by
/// construction; no normalization is applied here (it lives in the layer
/// style loss).
struct GramMatrix {
  MatD data;  // (channels, channels)
  std::string layer_id;
};

struct StyleTarget {
  std::vector<GramMatrix> grams;          // one per style layer
  std::vector<double> layer_weights;      // nonnegative, sums to 1
  std::vector<std::pair<int, int>> dims;  // (N_l, M_l) the grams were built from
};

struct LossWeights {
  double lambda_content = 7.5;
  double lambda_style = 100.0;
  double lambda_tv = 200.0;
};

inline void validate(const LossWeights& w) {
  bool finite = std::isfinite(w.lambda_content) && std::isfinite(w.lambda_style) &&
                std::isfinite(w.lambda_tv);
  require(finite && w.lambda_content >= 0 && w.lambda_style >= 0 && w.lambda_tv >= 0,
          "loss weights must be finite and nonnegative");
  require(w.lambda_content > 0 || w.lambda_style > 0 || w.lambda_tv > 0,
          "at least one loss weight must be nonzero");
}

inline void validate(const StyleTarget& t) {
  require(t.grams.size() == t.layer_weights.size() && t.grams.size() == t.dims.size(),
          "style target: grams, weights and dims must align");
  double sum = 0;
  for (double w : t.layer_weights) {
    require(w >= 0, "style layer weights must be nonnegative");
    sum += w;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "style layer weights must sum to 1");
}

namespace detail {
inline std::string shape_str(const MatD& m) {
  return "(" + std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + ")";
}
}  // namespace detail

/// Squared feature-map distance: 1/2 * sum_ij (F_ij - P_ij)^2.
inline double content_loss(const FeatureMap& f, const FeatureMap& p) {
  require(f.data.rows() == p.data.rows() && f.data.cols() == p.data.cols(),
          "content_loss: feature shape mismatch " + detail::shape_str(f.data) + " vs " +
              detail::shape_str(p.data));
  require(f.layer_id == p.layer_id, "content_loss: layer mismatch '" + f.layer_id + "' vs '" +
                                        p.layer_id + "'");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < f.data.rows(); ++i)
    for (Eigen::Index j = 0; j < f.data.cols(); ++j) {
      double d = f.data(i, j) - p.data(i, j);
      acc += d * d;
    }
  return 0.5 * acc;
}

/// d content_loss / dF = (F - P).
inline MatD content_loss_grad(const FeatureMap& f, const FeatureMap& p) {
  require(f.data.rows() == p.data.rows() && f.data.cols() == p.data.cols(),
          "content_loss_grad: feature shape mismatch");
  return f.data - p.data;
}

/// G_ij = sum_k F_ik F_jk. Exactly symmetric: only one triangle is computed
/// and mirrored.
inline GramMatrix gram_matrix(const FeatureMap& f) {
  const Eigen::Index n = f.data.rows();
  GramMatrix g;
  g.layer_id = f.layer_id;
  g.data.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < f.data.cols(); ++k) acc += f.data(i, k) * f.data(j, k);
      g.data(i, j) = acc;
      g.data(j, i) = acc;
    }
  return g;
}

/// E_l = 1/(4 N_l^2 M_l^2) * sum_ij (G_ij - A_ij)^2.
inline double layer_style_loss(const GramMatrix& g, const GramMatrix& a, int n_l, int m_l) {
  require(g.data.rows() == a.data.rows() && g.data.cols() == a.data.cols(),
          "layer_style_loss: gram shape mismatch " + detail::shape_str(g.data) + " vs " +
              detail::shape_str(a.data));
  require(n_l >= 1 && m_l >= 1, "layer_style_loss: N_l and M_l must be >= 1");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < g.data.rows(); ++i)
    for (Eigen::Index j = 0; j < g.data.cols(); ++j) {
      double d = g.data(i, j) - a.data(i, j);
      acc += d * d;
    }
  double n = static_cast<double>(n_l), m = static_cast<double>(m_l);
  return acc / (4.0 * n * n * m * m);
}

/// d E_l / dF for E_l = layer_style_loss(gram(F), A): (G - A) F / (N^2 M^2).
inline MatD layer_style_loss_grad(const FeatureMap& f, const GramMatrix& a, int n_l, int m_l) {
  GramMatrix g = gram_matrix(f);
  require(g.data.rows() == a.data.rows(), "layer_style_loss_grad: gram shape mismatch");
  double n = static_cast<double>(n_l), m = static_cast<double>(m_l);
  return ((g.data - a.data) * f.data) / (n * n * m * m);
}

/// Weighted sum over style layers, aligned by layer_id.
inline double style_loss(const std::vector<GramMatrix>& current, const StyleTarget& target,
                         const std::vector<std::pair<int, int>>& dims) {
  validate(target);
  require(current.size() == target.grams.size() && dims.size() == target.grams.size(),
          "style_loss: layer count mismatch");
  std::string missing;
  for (std::size_t l = 0; l < current.size(); ++l)
    if (current[l].layer_id != target.grams[l].layer_id)
      missing += (missing.empty() ? "" : ", ") + target.grams[l].layer_id;
  require(missing.empty(), "style_loss: layer set mismatch, expected layers: " + missing);
  double acc = 0.0;
  for (std::size_t l = 0; l < current.size(); ++l)
    acc += target.layer_weights[l] *
           layer_style_loss(current[l], target.grams[l], dims[l].first, dims[l].second);
  return acc;
}

/// Anisotropic squared total variation, summed over batch and channels:
/// sum (x[h][w+1]-x[h][w])^2 + sum (x[h+1][w]-x[h][w])^2. Zero iff every
/// channel plane is constant.
template <typename T>
double tv_loss(const Tensor4<T>& x) {
  require(x.h >= 1 && x.w >= 1, "tv_loss: image must have H >= 1 and W >= 1");
  double acc = 0.0;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const T* p = x.plane(i, j);
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx + 1 < x.w; ++xx) {
          double d = static_cast<double>(p[y * x.w + xx + 1]) - p[y * x.w + xx];
          acc += d * d;
        }
      for (int y = 0; y + 1 < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          double d = static_cast<double>(p[(y + 1) * x.w + xx]) - p[y * x.w + xx];
          acc += d * d;
        }
    }
  return acc;
}

template <typename T>
double tv_loss(const ImageTensorT<T>& img) {
  return tv_loss(img.data);
}

template <typename T>
Tensor4<T> tv_loss_grad(const Tensor4<T>& x) {
  Tensor4<T> g(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < x.c; ++j) {
      const T* p = x.plane(i, j);
      T* gp = g.plane(i, j);
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx + 1 < x.w; ++xx) {
          T d = 2 * (p[y * x.w + xx + 1] - p[y * x.w + xx]);
          gp[y * x.w + xx + 1] += d;
          gp[y * x.w + xx] -= d;
        }
      for (int y = 0; y + 1 < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          T d = 2 * (p[(y + 1) * x.w + xx] - p[y * x.w + xx]);
          gp[(y + 1) * x.w + xx] += d;
          gp[y * x.w + xx] -= d;
        }
    }
  return g;
}

/// lambda_c * content + lambda_s * style + lambda_tv * tv.
inline double total_objective(double content, double style, double tv, const LossWeights& w) {
  require(std::isfinite(content) && std::isfinite(style) && std::isfinite(tv),
          "total_objective: loss components must be finite");
  require(content >= 0 && style >= 0 && tv >= 0, "total_objective: losses must be nonnegative");
  validate(w);
  return w.lambda_content * content + w.lambda_style * style + w.lambda_tv * tv;
}

/// Uniform layer weights, 1/L each.
inline std::vector<double> uniform_layer_weights(std::size_t layers) {
  require(layers >= 1, "need at least one style layer");
  return std::vector<double>(layers, 1.0 / static_cast<double>(layers));
}

}  // namespace stada
