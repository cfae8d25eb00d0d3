#include "oneshot/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <sstream>

namespace oneshot::nn {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t r, const char* what) {
  if (s.size() != r) {
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                          shape_string(s));
  }
}

// Columns for sample n occupy [n*HoWo, (n+1)*HoWo) of a (C*k*k) x (N*HoWo) matrix.
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeometry& g, std::size_t ho, std::size_t wo,
            RowMat<T>& col) {
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t k = g.kernel, plane = ho * wo, ld = n_batch * plane;
  col.resize(static_cast<Eigen::Index>(c_in * k * k), static_cast<Eigen::Index>(ld));
  T* out = col.data();
  const T* in = x.data();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = out + ((c * k + ki) * k + kj) * ld;
        for (std::size_t n = 0; n < n_batch; ++n) {
          const T* src = in + (n * c_in + c) * h * w;
          T* dst = row + n * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            T* drow = dst + oh * wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(drow, drow + wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(ih) * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                             ? T(0)
                             : srow[static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const RowMat<T>& col, const ConvGeometry& g, std::size_t ho, std::size_t wo,
            Tensor<T>& gx) {
  const std::size_t n_batch = gx.dim(0), c_in = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const std::size_t k = g.kernel, plane = ho * wo, ld = n_batch * plane;
  const T* in = col.data();
  T* out = gx.data();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = in + ((c * k + ki) * k + kj) * ld;
        for (std::size_t n = 0; n < n_batch; ++n) {
          T* dst = out + (n * c_in + c) * h * w;
          const T* src = row + n * plane;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih =
                static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            T* drow = dst + static_cast<std::size_t>(ih) * w;
            const T* srow = src + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvGeometry& g) {
  require_rank(x.shape(), 4, "conv2d input");
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1);
  const std::size_t c_out = weight.dim(0);
  if (weight.dim(1) != c_in) {
    throw InvalidArgument("conv2d: input has " + std::to_string(c_in) + " channels, weight expects " +
                          std::to_string(weight.dim(1)));
  }
  const std::size_t ho = g.out_extent(x.dim(2)), wo = g.out_extent(x.dim(3));
  const std::size_t plane = ho * wo, ld = n_batch * plane, kdim = c_in * g.kernel * g.kernel;

  RowMat<T> col;
  im2col(x, g, ho, wo, col);
  CMapMat<T> w(weight.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kdim));
  RowMat<T> out = w * col;

  Tensor<T> y({n_batch, c_out, ho, wo});
  for (std::size_t o = 0; o < c_out; ++o) {
    const T b = bias.empty() ? T(0) : bias[o];
    const T* src = out.data() + o * ld;
    for (std::size_t n = 0; n < n_batch; ++n) {
      T* dst = y.data() + (n * c_out + o) * plane;
      const T* s = src + n * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = s[i] + b;
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias) {
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1);
  const std::size_t c_out = weight.dim(0);
  const std::size_t ho = grad_out.dim(2), wo = grad_out.dim(3);
  const std::size_t plane = ho * wo, ld = n_batch * plane, kdim = c_in * g.kernel * g.kernel;

  RowMat<T> gmat(static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(ld));
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* src = grad_out.data() + (n * c_out + o) * plane;
      std::copy(src, src + plane, gmat.data() + o * ld + n * plane);
    }
  }
  if (grad_bias) {
    for (std::size_t o = 0; o < c_out; ++o) (*grad_bias)[o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
  }
  if (!grad_weight && !grad_in) return;

  CMapMat<T> w(weight.data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kdim));
  if (grad_weight) {
    RowMat<T> col;
    im2col(x, g, ho, wo, col);
    MapMat<T> gw(grad_weight->data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kdim));
    gw.noalias() += gmat * col.transpose();
  }
  if (grad_in) {
    RowMat<T> dcol = w.transpose() * gmat;
    *grad_in = Tensor<T>(x.shape());
    col2im(dcol, g, ho, wo, *grad_in);
  }
}

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                T eps, Tensor<T>* xhat, Tensor<T>* inv_std) {
  require_rank(x.shape(), 4, "instance_norm input");
  const std::size_t n_batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  if (xhat) *xhat = Tensor<T>(x.shape());
  if (inv_std) *inv_std = Tensor<T>({n_batch, c});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (n * c + ch) * plane;
      const T* src = x.data() + off;
      T mean = 0;
      for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      mean /= static_cast<T>(plane);
      T var = 0;
      for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<T>(plane);
      const T istd = T(1) / std::sqrt(var + eps);
      if (inv_std) (*inv_std)[n * c + ch] = istd;
      T* dst = y.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (src[i] - mean) * istd;
        if (xhat) (*xhat)[off + i] = xh;
        dst[i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return y;
}

template <typename T>
void instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& xhat,
                            const Tensor<T>& inv_std, const Tensor<T>& gamma, Tensor<T>* grad_in,
                            Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const std::size_t n_batch = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  if (grad_in) *grad_in = Tensor<T>(grad_out.shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (n * c + ch) * plane;
      const T* gy = grad_out.data() + off;
      const T* xh = xhat.data() + off;
      T sum_g = 0, sum_gx = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += gy[i];
        sum_gx += gy[i] * xh[i];
      }
      if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
      if (grad_beta) (*grad_beta)[ch] += sum_g;
      if (grad_in) {
        const T scale = gamma[ch] * inv_std[n * c + ch];
        const T mean_g = sum_g / static_cast<T>(plane);
        const T mean_gx = sum_gx / static_cast<T>(plane);
        T* gx = grad_in->data() + off;
        for (std::size_t i = 0; i < plane; ++i) gx[i] = scale * (gy[i] - mean_g - xh[i] * mean_gx);
      }
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& y) {
  Tensor<T> gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = y[i] > T(0) ? grad_out[i] : T(0);
  return gx;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& y) {
  Tensor<T> gx(grad_out.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return gx;
}

template <typename T>
Tensor<T> avg_pool2_forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "avg_pool2 input");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const T* a = src + 2 * i * w + 2 * j;
        dst[i * wo + j] = T(0.25) * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out) {
  const std::size_t nc = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t ho = grad_out.dim(2), wo = grad_out.dim(3), h = ho * 2, w = wo * 2;
  Tensor<T> gx({grad_out.dim(0), grad_out.dim(1), h, w});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = grad_out.data() + p * ho * wo;
    T* dst = gx.data() + p * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const T g = T(0.25) * src[i * wo + j];
        T* a = dst + 2 * i * w + 2 * j;
        a[0] = g;
        a[1] = g;
        a[w] = g;
        a[w + 1] = g;
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "upsample2 input");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), h * 2, w * 2});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * h * w * 4;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out) {
  const std::size_t nc = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t h = grad_out.dim(2) / 2, w = grad_out.dim(3) / 2;
  Tensor<T> gx({grad_out.dim(0), grad_out.dim(1), h, w});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = grad_out.data() + p * h * w * 4;
    T* dst = gx.data() + p * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool input");
  const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < nc; ++p) {
    const T* src = x.data() + p * plane;
    T s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    y[p] = s / static_cast<T>(plane);
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
  Tensor<T> gx(in_shape);
  const std::size_t nc = in_shape[0] * in_shape[1], plane = in_shape[2] * in_shape[3];
  for (std::size_t p = 0; p < nc; ++p) {
    const T g = grad_out[p] / static_cast<T>(plane);
    std::fill(gx.data() + p * plane, gx.data() + (p + 1) * plane, g);
  }
  return gx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  const auto n = static_cast<Eigen::Index>(x.dim(0)), in = static_cast<Eigen::Index>(x.dim(1));
  const auto out = static_cast<Eigen::Index>(weight.dim(0));
  if (static_cast<Eigen::Index>(weight.dim(1)) != in) {
    throw InvalidArgument("linear: input width " + std::to_string(in) + " does not match weight " +
                          shape_string(weight.shape()));
  }
  Tensor<T> y({x.dim(0), weight.dim(0)});
  CMapMat<T> xm(x.data(), n, in);
  CMapMat<T> wm(weight.data(), out, in);
  MapMat<T> ym(y.data(), n, out);
  ym.noalias() = xm * wm.transpose();
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < out; ++c) ym(r, c) += bias[static_cast<std::size_t>(c)];
  }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const auto n = static_cast<Eigen::Index>(x.dim(0)), in = static_cast<Eigen::Index>(x.dim(1));
  const auto out = static_cast<Eigen::Index>(weight.dim(0));
  CMapMat<T> xm(x.data(), n, in);
  CMapMat<T> wm(weight.data(), out, in);
  CMapMat<T> gm(grad_out.data(), n, out);
  if (grad_weight) {
    MapMat<T> gw(grad_weight->data(), out, in);
    gw.noalias() += gm.transpose() * xm;
  }
  if (grad_bias) {
    for (Eigen::Index c = 0; c < out; ++c) (*grad_bias)[static_cast<std::size_t>(c)] += gm.col(c).sum();
  }
  if (grad_in) {
    *grad_in = Tensor<T>(x.shape());
    MapMat<T> gx(grad_in->data(), n, in);
    gx.noalias() = gm * wm;
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b, a.shape(), "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define ONESHOT_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    const ConvGeometry&);                                          \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                const ConvGeometry&, Tensor<T>*, Tensor<T>*, Tensor<T>*);          \
  template Tensor<T> instance_norm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, \
                                           Tensor<T>*, Tensor<T>*);                                \
  template void instance_norm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                       const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);      \
  template Tensor<T> relu_forward(const Tensor<T>&);                                               \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sigmoid_forward(const Tensor<T>&);                                            \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> avg_pool2_forward(const Tensor<T>&);                                          \
  template Tensor<T> avg_pool2_backward(const Tensor<T>&);                                         \
  template Tensor<T> upsample2_forward(const Tensor<T>&);                                          \
  template Tensor<T> upsample2_backward(const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool_forward(const Tensor<T>&);                                    \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);                     \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,  \
                                Tensor<T>*, Tensor<T>*);                                           \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

ONESHOT_INSTANTIATE_OPS(float)
ONESHOT_INSTANTIATE_OPS(double)

#undef ONESHOT_INSTANTIATE_OPS

}  // namespace ops
}  // namespace oneshot::nn
