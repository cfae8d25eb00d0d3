#include "oneshot/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace oneshot::nn {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw InvalidArgument(std::string(what) + ": expected an N x C matrix");
}

constexpr double kProbFloor = 1e-8;

}  // namespace

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  require_matrix(logits, "log_softmax");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.data() + r * c;
    const T m = *std::max_element(z, z + c);
    T s = 0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(z[k] - m);
    const T lse = m + std::log(s);
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = z[k] - lse;
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  auto out = log_softmax(logits);
  for (auto& v : out.values()) v = std::exp(v);
  return out;
}

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw InvalidArgument("cross_entropy: label count does not match batch");
  const auto logp = log_softmax(logits);
  LossResult<T> r{T(0), Tensor<T>(logits.shape())};
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(c) + ")");
    }
    r.value -= logp[i * c + static_cast<std::size_t>(y)];
    for (std::size_t k = 0; k < c; ++k) {
      r.grad[i * c + k] = (std::exp(logp[i * c + k]) - (static_cast<int>(k) == y ? T(1) : T(0))) * inv_n;
    }
  }
  r.value *= inv_n;
  return r;
}

template <typename T>
LossResult<T> soft_kl(const Tensor<T>& logits, const Tensor<T>& targets, KlDirection direction) {
  require_matrix(logits, "soft_kl");
  require_shape(targets, logits.shape(), "soft_kl targets");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto logp = log_softmax(logits);
  LossResult<T> r{T(0), Tensor<T>(logits.shape())};
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* lp = logp.data() + i * c;
    const T* y = targets.data() + i * c;
    T* g = r.grad.data() + i * c;
    if (direction == KlDirection::kTeacherToStudent) {
      T ysum = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const T yk = std::max(y[k], T(kProbFloor));
        if (y[k] > 0) r.value += y[k] * (std::log(yk) - lp[k]);
        ysum += y[k];
      }
      for (std::size_t k = 0; k < c; ++k) g[k] = (std::exp(lp[k]) * ysum - y[k]) * inv_n;
    } else {
      T kl = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const T logy = std::log(std::max(y[k], T(kProbFloor)));
        kl += std::exp(lp[k]) * (lp[k] - logy);
      }
      r.value += kl;
      for (std::size_t k = 0; k < c; ++k) {
        const T logy = std::log(std::max(y[k], T(kProbFloor)));
        g[k] = std::exp(lp[k]) * (lp[k] - logy - kl) * inv_n;
      }
    }
  }
  r.value *= inv_n;
  return r;
}

template <typename T>
LossResult<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "mse");
  LossResult<T> r{T(0), Tensor<T>(a.shape())};
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(a.size(), 1));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    r.value += d * d;
    r.grad[i] = T(2) * d * inv;
  }
  r.value *= inv;
  return r;
}

#define ONESHOT_INSTANTIATE_LOSS(T)                                                     \
  template Tensor<T> softmax(const Tensor<T>&);                                         \
  template Tensor<T> log_softmax(const Tensor<T>&);                                     \
  template LossResult<T> cross_entropy(const Tensor<T>&, std::span<const int>);         \
  template LossResult<T> soft_kl(const Tensor<T>&, const Tensor<T>&, KlDirection);      \
  template LossResult<T> mse(const Tensor<T>&, const Tensor<T>&);

ONESHOT_INSTANTIATE_LOSS(float)
ONESHOT_INSTANTIATE_LOSS(double)

#undef ONESHOT_INSTANTIATE_LOSS

}  // namespace oneshot::nn
