#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "oneshot/nn/ops.hpp"
#include "oneshot/rng.hpp"

namespace oneshot::nn {

/// Per-layer saved state from a forward pass, consumed by backward.
template <typename T>
struct Cache {
  std::vector<Tensor<T>> saved;
  Shape input_shape;
};

/// A differentiable layer. Layers own their parameters; forward/backward are
/// const, so a trained network can serve concurrent callers that each keep
/// their own caches.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// `cache` may be null for inference-only calls.
  virtual Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const = 0;

  /// `param_grads` is empty (skip parameter gradients) or holds one tensor per
  /// parameter, accumulated into. Returns an empty tensor when
  /// `need_input_grad` is false.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                             std::span<Tensor<T>> param_grads, bool need_input_grad) const = 0;

  std::span<Tensor<T>> params() noexcept { return params_; }
  std::span<const Tensor<T>> params() const noexcept { return params_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }

 protected:
  void add_param(std::string name, Tensor<T> value) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(value));
  }

  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, ops::ConvGeometry geometry, Rng& rng);

  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;

  const ops::ConvGeometry& geometry() const noexcept { return geometry_; }

 private:
  ops::ConvGeometry geometry_;
};

template <typename T>
class InstanceNorm final : public Layer<T> {
 public:
  explicit InstanceNorm(std::size_t channels, T eps = T(1e-5));

  std::string kind() const override { return "instance_norm"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<InstanceNorm>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;

 private:
  T eps_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  std::string kind() const override { return "sigmoid"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

template <typename T>
class AvgPool2 final : public Layer<T> {
 public:
  std::string kind() const override { return "avg_pool2"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<AvgPool2>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

template <typename T>
class Upsample2 final : public Layer<T> {
 public:
  std::string kind() const override { return "upsample2"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Upsample2>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;
};

/// conv3x3(stride) -> norm -> relu -> conv3x3 -> norm, plus a skip path
/// (identity, or 1x1 conv + norm when the shape changes), then relu.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng);

  std::string kind() const override { return "residual_block"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                     std::span<Tensor<T>> param_grads, bool need_input_grad) const override;

  bool has_projection() const noexcept { return projection_; }

 private:
  std::size_t stride_;
  bool projection_;
};

}  // namespace oneshot::nn
