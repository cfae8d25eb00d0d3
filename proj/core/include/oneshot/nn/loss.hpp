#pragma once

#include <span>
#include <vector>

#include "oneshot/nn/tensor.hpp"

namespace oneshot::nn {

template <typename T>
struct LossResult {
  T value{};
  Tensor<T> grad;  // d(value)/d(input), same shape as the input
};

/// Row-wise softmax of an N x C logit matrix.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Row-wise log-softmax.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits);

/// Mean cross-entropy of integer labels against logits.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Which way round the soft-label divergence is taken.
enum class KlDirection {
  kTeacherToStudent,  // KL(y || p): soft-target cross-entropy minus teacher entropy
  kStudentToTeacher,  // KL(p || y)
};

/// Batch-mean KL divergence between teacher probabilities `targets` (N x C)
/// and the student distribution softmax(logits). Teacher probabilities are
/// clamped to >= 1e-8 inside logarithms so the value stays finite.
template <typename T>
LossResult<T> soft_kl(const Tensor<T>& logits, const Tensor<T>& targets,
                      KlDirection direction = KlDirection::kTeacherToStudent);

/// Mean over all elements of (a - b)^2; gradient is w.r.t. `a`.
template <typename T>
LossResult<T> mse(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace oneshot::nn
