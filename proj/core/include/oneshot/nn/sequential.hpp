#pragma once

#include <memory>
#include <string>
#include <vector>

#include "oneshot/nn/layers.hpp"

namespace oneshot::nn {

template <typename T>
using Trace = std::vector<Cache<T>>;

/// One gradient tensor per parameter, in Sequential::parameters() order.
template <typename T>
using Gradients = std::vector<Tensor<T>>;

/// An ordered chain of layers with value semantics (copies deep-clone).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return *this;
  }

  std::size_t size() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Trace<T>& trace) const;

  /// Back-propagates `grad_out` through the traced forward pass. Parameter
  /// gradients are accumulated into `grads` when it is non-null.
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, Gradients<T>* grads,
                     bool need_input_grad = true) const;

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::vector<std::string> parameter_names() const;
  /// Total number of scalar parameters.
  std::size_t parameter_count() const;
  Gradients<T> zero_gradients() const;

  /// Copy parameter values from a network of identical structure, converting
  /// the scalar type if needed.
  template <typename U>
  void load_parameters_from(const Sequential<U>& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) {
      throw InvalidArgument("load_parameters_from: parameter count mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      require_shape(*dst[i], src[i]->shape(), "load_parameters_from");
      std::copy(src[i]->values().begin(), src[i]->values().end(), dst[i]->values().begin());
    }
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

extern template class Sequential<float>;
extern template class Sequential<double>;

}  // namespace oneshot::nn
