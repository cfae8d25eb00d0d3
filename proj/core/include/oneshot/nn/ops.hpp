#pragma once

// Forward/backward kernels shared by the layer classes. All activations are
// NCHW (or N x features for dense ops). Backward functions accumulate into the
// parameter-gradient outputs and skip any output passed as nullptr.

#include "oneshot/nn/tensor.hpp"

namespace oneshot::nn::ops {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvGeometry& g);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias);

/// Per-sample, per-channel normalization with affine scale/shift. `xhat` and
/// `inv_std` are written for use by the backward pass.
template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                T eps, Tensor<T>* xhat, Tensor<T>* inv_std);

template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& xhat,
                            const Tensor<T>& inv_std, const Tensor<T>& gamma, Tensor<T>* grad_in,
                            Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
/// `y` is the forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& y);

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& y);

/// 2x2 average pooling with stride 2.
template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out);

/// NCHW -> NC by spatial mean.
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape);

/// y = x W^T + b with x: N x in, W: out x in.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace oneshot::nn::ops
