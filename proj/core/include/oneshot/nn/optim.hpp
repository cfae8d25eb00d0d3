#pragma once

#include <cmath>
#include <vector>

#include "oneshot/nn/tensor.hpp"

namespace oneshot::nn {

/// SGD with heavy-ball momentum and L2 weight decay (decay added to the
/// gradient before the momentum update).
template <typename T>
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads) {
    if (velocity_.empty()) {
      for (const auto* p : params) velocity_.emplace_back(p->shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = *params[i];
      auto& v = velocity_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const T d = g[j] + static_cast<T>(weight_decay_) * w[j];
        v[j] = static_cast<T>(momentum_) * v[j] + d;
        w[j] -= static_cast<T>(lr_) * v[j];
      }
    }
  }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = *params[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = grads[i][j];
        const double m = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        const double v = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        w[j] -= static_cast<T>(lr_ * (m / c1) / (std::sqrt(v / c2) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace oneshot::nn
