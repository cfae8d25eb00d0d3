#include <cmath>

#include "oneshot/nn/layers.hpp"
#include "oneshot/nn/sequential.hpp"

namespace oneshot::nn {
namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

template <typename T>
Tensor<T>* grad_slot(std::span<Tensor<T>> grads, std::size_t i) {
  return grads.empty() ? nullptr : &grads[i];
}

}  // namespace

// ---- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, ops::ConvGeometry geometry,
                  Rng& rng)
    : geometry_(geometry) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * geometry.kernel * geometry.kernel));
  this->add_param("weight", uniform_tensor<T>({out_channels, in_channels, geometry.kernel, geometry.kernel},
                                              bound, rng));
  this->add_param("bias", uniform_tensor<T>({out_channels}, bound, rng));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) cache->saved = {x};
  return ops::conv2d_forward(x, this->params_[0], this->params_[1], geometry_);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                              std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  Tensor<T> gx;
  ops::conv2d_backward(cache.saved[0], this->params_[0], grad_out, geometry_,
                       need_input_grad ? &gx : nullptr, grad_slot(param_grads, 0),
                       grad_slot(param_grads, 1));
  return gx;
}

// ---- InstanceNorm -----------------------------------------------------------

template <typename T>
InstanceNorm<T>::InstanceNorm(std::size_t channels, T eps) : eps_(eps) {
  this->add_param("gamma", Tensor<T>({channels}, T(1)));
  this->add_param("beta", Tensor<T>({channels}, T(0)));
}

template <typename T>
Tensor<T> InstanceNorm<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (!cache) return ops::instance_norm_forward<T>(x, this->params_[0], this->params_[1], eps_, nullptr, nullptr);
  cache->saved.assign(2, Tensor<T>());
  return ops::instance_norm_forward<T>(x, this->params_[0], this->params_[1], eps_, &cache->saved[0],
                                       &cache->saved[1]);
}

template <typename T>
Tensor<T> InstanceNorm<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                                    std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  Tensor<T> gx;
  ops::instance_norm_backward(grad_out, cache.saved[0], cache.saved[1], this->params_[0],
                              need_input_grad ? &gx : nullptr, grad_slot(param_grads, 0),
                              grad_slot(param_grads, 1));
  return gx;
}

// ---- Activations, pooling ---------------------------------------------------

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  auto y = ops::relu_forward(x);
  if (cache) cache->saved = {y};
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, std::span<Tensor<T>>,
                            bool need_input_grad) const {
  return need_input_grad ? ops::relu_backward(grad_out, cache.saved[0]) : Tensor<T>();
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  auto y = ops::sigmoid_forward(x);
  if (cache) cache->saved = {y};
  return y;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, std::span<Tensor<T>>,
                               bool need_input_grad) const {
  return need_input_grad ? ops::sigmoid_backward(grad_out, cache.saved[0]) : Tensor<T>();
}

template <typename T>
Tensor<T> AvgPool2<T>::forward(const Tensor<T>& x, Cache<T>*) const {
  return ops::avg_pool2_forward(x);
}

template <typename T>
Tensor<T> AvgPool2<T>::backward(const Tensor<T>& grad_out, const Cache<T>&, std::span<Tensor<T>>,
                                bool need_input_grad) const {
  return need_input_grad ? ops::avg_pool2_backward(grad_out) : Tensor<T>();
}

template <typename T>
Tensor<T> Upsample2<T>::forward(const Tensor<T>& x, Cache<T>*) const {
  return ops::upsample2_forward(x);
}

template <typename T>
Tensor<T> Upsample2<T>::backward(const Tensor<T>& grad_out, const Cache<T>&, std::span<Tensor<T>>,
                                 bool need_input_grad) const {
  return need_input_grad ? ops::upsample2_backward(grad_out) : Tensor<T>();
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) cache->input_shape = x.shape();
  return ops::global_avg_pool_forward(x);
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                                     std::span<Tensor<T>>, bool need_input_grad) const {
  return need_input_grad ? ops::global_avg_pool_backward(grad_out, cache.input_shape) : Tensor<T>();
}

// ---- Linear -----------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  this->add_param("weight", uniform_tensor<T>({out_features, in_features}, bound, rng));
  this->add_param("bias", uniform_tensor<T>({out_features}, bound, rng));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  if (cache) cache->saved = {x};
  return ops::linear_forward(x, this->params_[0], this->params_[1]);
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                              std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  Tensor<T> gx;
  ops::linear_backward(cache.saved[0], this->params_[0], grad_out, need_input_grad ? &gx : nullptr,
                       grad_slot(param_grads, 0), grad_slot(param_grads, 1));
  return gx;
}

// ---- ResidualBlock ----------------------------------------------------------
// Params: w1, g1, b1, w2, g2, b2 [, wp, gp, bp]. Convs are bias-free since a
// norm follows each one.

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                Rng& rng)
    : stride_(stride), projection_(stride != 1 || in_channels != out_channels) {
  const double b1 = 1.0 / std::sqrt(static_cast<double>(in_channels * 9));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(out_channels * 9));
  this->add_param("conv1.weight", uniform_tensor<T>({out_channels, in_channels, 3, 3}, b1, rng));
  this->add_param("norm1.gamma", Tensor<T>({out_channels}, T(1)));
  this->add_param("norm1.beta", Tensor<T>({out_channels}, T(0)));
  this->add_param("conv2.weight", uniform_tensor<T>({out_channels, out_channels, 3, 3}, b2, rng));
  this->add_param("norm2.gamma", Tensor<T>({out_channels}, T(1)));
  this->add_param("norm2.beta", Tensor<T>({out_channels}, T(0)));
  if (projection_) {
    const double bp = 1.0 / std::sqrt(static_cast<double>(in_channels));
    this->add_param("proj.weight", uniform_tensor<T>({out_channels, in_channels, 1, 1}, bp, rng));
    this->add_param("proj_norm.gamma", Tensor<T>({out_channels}, T(1)));
    this->add_param("proj_norm.beta", Tensor<T>({out_channels}, T(0)));
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Cache<T>* cache) const {
  const auto& p = this->params_;
  const Tensor<T> none;
  const ops::ConvGeometry g1{3, stride_, 1}, g2{3, 1, 1}, gp{1, stride_, 0};
  const T eps = T(1e-5);

  // saved: x, xhat1, istd1, r1, xhat2, istd2, y [, xhatp, istdp]
  std::vector<Tensor<T>> s(projection_ ? 9 : 7);
  Tensor<T>* sv = cache ? s.data() : nullptr;
  auto slot = [&](std::size_t i) { return sv ? &s[i] : nullptr; };

  auto c1 = ops::conv2d_forward(x, p[0], none, g1);
  auto n1 = ops::instance_norm_forward(c1, p[1], p[2], eps, slot(1), slot(2));
  auto r1 = ops::relu_forward(n1);
  auto c2 = ops::conv2d_forward(r1, p[3], none, g2);
  auto out = ops::instance_norm_forward(c2, p[4], p[5], eps, slot(4), slot(5));
  if (projection_) {
    auto cp = ops::conv2d_forward(x, p[6], none, gp);
    ops::add_inplace(out, ops::instance_norm_forward(cp, p[7], p[8], eps, slot(7), slot(8)));
  } else {
    ops::add_inplace(out, x);
  }
  auto y = ops::relu_forward(out);
  if (cache) {
    s[0] = x;
    s[3] = std::move(r1);
    s[6] = y;
    cache->saved = std::move(s);
  }
  return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache,
                                     std::span<Tensor<T>> param_grads, bool need_input_grad) const {
  const auto& p = this->params_;
  const auto& s = cache.saved;
  const ops::ConvGeometry g1{3, stride_, 1}, g2{3, 1, 1}, gp{1, stride_, 0};
  auto gs = ops::relu_backward(grad_out, s[6]);

  Tensor<T> gc2, gr1, gc1, gx;
  ops::instance_norm_backward(gs, s[4], s[5], p[4], &gc2, grad_slot(param_grads, 4),
                              grad_slot(param_grads, 5));
  ops::conv2d_backward(s[3], p[3], gc2, g2, &gr1, grad_slot(param_grads, 3), static_cast<Tensor<T>*>(nullptr));
  auto gn1 = ops::relu_backward(gr1, s[3]);
  ops::instance_norm_backward(gn1, s[1], s[2], p[1], &gc1, grad_slot(param_grads, 1),
                              grad_slot(param_grads, 2));
  ops::conv2d_backward(s[0], p[0], gc1, g1, need_input_grad ? &gx : nullptr, grad_slot(param_grads, 0),
                       static_cast<Tensor<T>*>(nullptr));
  if (projection_) {
    Tensor<T> gcp, gxp;
    ops::instance_norm_backward(gs, s[7], s[8], p[7], &gcp, grad_slot(param_grads, 7),
                                grad_slot(param_grads, 8));
    ops::conv2d_backward(s[0], p[6], gcp, gp, need_input_grad ? &gxp : nullptr,
                         grad_slot(param_grads, 6), static_cast<Tensor<T>*>(nullptr));
    if (need_input_grad) ops::add_inplace(gx, gxp);
  } else if (need_input_grad) {
    ops::add_inplace(gx, gs);
  }
  return gx;
}

// ---- Sequential -------------------------------------------------------------

template <typename T>
Sequential<T>::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Sequential<T>& Sequential<T>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential tmp(other);
    layers_ = std::move(tmp.layers_);
  }
  return *this;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (const auto& l : layers_) h = l->forward(h, nullptr);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Trace<T>& trace) const {
  trace.assign(layers_.size(), Cache<T>{});
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, &trace[i]);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Trace<T>& trace, const Tensor<T>& grad_out, Gradients<T>* grads,
                                  bool need_input_grad) const {
  if (trace.size() != layers_.size()) throw InvalidArgument("backward: trace does not match network");
  std::size_t offset = grads ? grads->size() : 0;
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto n = layers_[i]->params().size();
    std::span<Tensor<T>> pg;
    if (grads) {
      offset -= n;
      pg = std::span<Tensor<T>>(grads->data() + offset, n);
    }
    const bool want_input = i > 0 || need_input_grad;
    g = layers_[i]->backward(g, trace[i], pg, want_input);
    if (!want_input) break;
  }
  return g;
}

template <typename T>
std::vector<Tensor<T>*> Sequential<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Sequential<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& l : layers_) {
    for (const auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

template <typename T>
std::vector<std::string> Sequential<T>::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto& n : layers_[i]->param_names()) {
      out.push_back(std::to_string(i) + "." + layers_[i]->kind() + "." + n);
    }
  }
  return out;
}

template <typename T>
std::size_t Sequential<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
Gradients<T> Sequential<T>::zero_gradients() const {
  Gradients<T> g;
  for (const auto* p : parameters()) g.emplace_back(p->shape());
  return g;
}

#define ONESHOT_INSTANTIATE_LAYERS(T) \
  template class Conv2d<T>;           \
  template class InstanceNorm<T>;     \
  template class Relu<T>;             \
  template class Sigmoid<T>;          \
  template class AvgPool2<T>;         \
  template class Upsample2<T>;        \
  template class GlobalAvgPool<T>;    \
  template class Linear<T>;           \
  template class ResidualBlock<T>;    \
  template class Sequential<T>;

ONESHOT_INSTANTIATE_LAYERS(float)
ONESHOT_INSTANTIATE_LAYERS(double)

#undef ONESHOT_INSTANTIATE_LAYERS

}  // namespace oneshot::nn
