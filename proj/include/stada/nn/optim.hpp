#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stada/core/error.hpp"

namespace stada::nn {

/// A network's learnable tensors, in a fixed enumeration order shared by
/// serialization and the optimizers.
template <typename T>
struct ParamSet {
  std::vector<std::vector<T>*> tensors;

  std::size_t total() const {
    std::size_t s = 0;
    for (auto* t : tensors) s += t->size();
    return s;
  }

  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(total());
    for (auto* t : tensors) out.insert(out.end(), t->begin(), t->end());
    return out;
  }

  void unflatten(const std::vector<T>& flat) {
    require(flat.size() == total(), "parameter blob size mismatch: expected " +
                                        std::to_string(total()) + ", got " +
                                        std::to_string(flat.size()));
    std::size_t off = 0;
    for (auto* t : tensors) {
      std::copy(flat.begin() + off, flat.begin() + off + t->size(), t->begin());
      off += t->size();
    }
  }
};

/// Gradient storage aligned with a ParamSet.
template <typename T>
struct GradSet {
  std::vector<std::vector<T>> tensors;

  explicit GradSet(const ParamSet<T>& params) {
    tensors.reserve(params.tensors.size());
    for (auto* t : params.tensors) tensors.emplace_back(t->size(), T(0));
  }

  void zero() {
    for (auto& t : tensors) std::fill(t.begin(), t.end(), T(0));
  }

  void scale(T s) {
    for (auto& t : tensors)
      for (auto& v : t) v *= s;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (T v : t)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(const ParamSet<T>& params, T lr, T momentum = static_cast<T>(0.9))
      : lr_(lr), momentum_(momentum) {
    for (auto* t : params.tensors) vel_.emplace_back(t->size(), T(0));
  }

  void step(ParamSet<T>& params, const GradSet<T>& grads) {
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto& p = *params.tensors[k];
      auto& v = vel_[k];
      const auto& g = grads.tensors[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        p[i] -= lr_ * v[i];
      }
    }
  }

 private:
  T lr_, momentum_;
  std::vector<std::vector<T>> vel_;
};

template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, T lr, T beta1 = static_cast<T>(0.9),
       T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* t : params.tensors) {
      m_.emplace_back(t->size(), T(0));
      v_.emplace_back(t->size(), T(0));
    }
  }

  void step(ParamSet<T>& params, const GradSet<T>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
    double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto& p = *params.tensors[k];
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& g = grads.tensors[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        double mh = m[i] / bc1, vh = v[i] / bc2;
        p[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  T lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace stada::nn
