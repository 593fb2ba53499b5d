#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "cadnet/error.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

enum class Padding { same, valid };
enum class Activation { relu, sigmoid, exp };

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatRM<T>>;

struct ConvDims {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

inline ConvDims conv_dims(int in_h, int in_w, int k, int stride, Padding padding) {
  if (stride < 1) throw config_error("conv2d stride must be >= 1");
  if (k < 1) throw config_error("conv2d kernel size must be >= 1");
  ConvDims d;
  if (padding == Padding::same) {
    d.out_h = (in_h + stride - 1) / stride;
    d.out_w = (in_w + stride - 1) / stride;
    const int pad_h = std::max(0, (d.out_h - 1) * stride + k - in_h);
    const int pad_w = std::max(0, (d.out_w - 1) * stride + k - in_w);
    d.pad_top = pad_h / 2;
    d.pad_left = pad_w / 2;
  } else {
    if (in_h < k || in_w < k)
      throw config_error("conv2d kernel " + std::to_string(k) + "x" + std::to_string(k) +
                         " larger than " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                         " input with valid padding");
    d.out_h = (in_h - k) / stride + 1;
    d.out_w = (in_w - k) / stride + 1;
  }
  return d;
}

/// Unpacks conv patches of X (N,H,W,Cin) into rows of (N*OH*OW, k*k*Cin).
/// Column order is (dy, dx, cin), matching a row-major kernel reshape.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int k, int stride, const ConvDims& d) {
  const int n = x.extent(0), in_h = x.extent(1), in_w = x.extent(2), cin = x.extent(3);
  Tensor<T> cols({n * d.out_h * d.out_w, k * k * cin});
  T* out = cols.data();
  const T* in = x.data();
  const std::int64_t row_stride = static_cast<std::int64_t>(in_w) * cin;
  const std::int64_t img_stride = static_cast<std::int64_t>(in_h) * row_stride;
  for (int img = 0; img < n; ++img) {
    for (int oy = 0; oy < d.out_h; ++oy) {
      const int y0 = oy * stride - d.pad_top;
      for (int ox = 0; ox < d.out_w; ++ox) {
        const int x0 = ox * stride - d.pad_left;
        for (int dy = 0; dy < k; ++dy) {
          const int y = y0 + dy;
          if (y < 0 || y >= in_h) {
            std::fill(out, out + static_cast<std::size_t>(k) * cin, T{0});
            out += static_cast<std::size_t>(k) * cin;
            continue;
          }
          const T* row = in + img * img_stride + y * row_stride;
          for (int dx = 0; dx < k; ++dx) {
            const int xx = x0 + dx;
            if (xx < 0 || xx >= in_w) {
              std::fill(out, out + cin, T{0});
            } else {
              std::copy(row + static_cast<std::int64_t>(xx) * cin,
                        row + static_cast<std::int64_t>(xx + 1) * cin, out);
            }
            out += cin;
          }
        }
      }
    }
  }
  return cols;
}

/// Scatter-adds patch rows back into an (N,H,W,Cin) image, inverse of im2col.
template <typename T>
void col2im_add(const Tensor<T>& cols, int k, int stride, const ConvDims& d, Tensor<T>& x) {
  const int n = x.extent(0), in_h = x.extent(1), in_w = x.extent(2), cin = x.extent(3);
  const T* in = cols.data();
  T* out = x.data();
  const std::int64_t row_stride = static_cast<std::int64_t>(in_w) * cin;
  const std::int64_t img_stride = static_cast<std::int64_t>(in_h) * row_stride;
  for (int img = 0; img < n; ++img) {
    for (int oy = 0; oy < d.out_h; ++oy) {
      const int y0 = oy * stride - d.pad_top;
      for (int ox = 0; ox < d.out_w; ++ox) {
        const int x0 = ox * stride - d.pad_left;
        for (int dy = 0; dy < k; ++dy) {
          const int y = y0 + dy;
          if (y < 0 || y >= in_h) {
            in += static_cast<std::size_t>(k) * cin;
            continue;
          }
          T* row = out + img * img_stride + y * row_stride;
          for (int dx = 0; dx < k; ++dx) {
            const int xx = x0 + dx;
            if (xx >= 0 && xx < in_w) {
              T* dst = row + static_cast<std::int64_t>(xx) * cin;
              for (int c = 0; c < cin; ++c) dst[c] += in[c];
            }
            in += cin;
          }
        }
      }
    }
  }
}

}  // namespace detail

/// y = W^T-free convention: x (in), weights (in, out), bias (out).
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 1 || weights.rank() != 2 || bias.rank() != 1)
    throw config_error("fc_forward expects ranks 1/2/1");
  if (x.extent(0) != weights.extent(0) || bias.extent(0) != weights.extent(1))
    throw config_error("fc_forward shape mismatch: x " + shape_to_string(x.shape()) +
                       ", weights " + shape_to_string(weights.shape()) + ", bias " +
                       shape_to_string(bias.shape()));
  const int in = weights.extent(0), out = weights.extent(1);
  Tensor<T> y({out});
  detail::MapCM<T> wm(weights.data(), in, out);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> xv(x.data(), in);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> yv(y.data(), out);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), out);
  yv.noalias() = xv * wm;
  yv += bv;
  y.require_finite("fc_forward");
  return y;
}

/// Batched fully connected layer: X (N, in) * W (in, out) + bias.
template <typename T>
Tensor<T> fc_forward_batch(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2 || weights.rank() != 2 || bias.rank() != 1)
    throw config_error("fc_forward_batch expects ranks 2/2/1");
  if (x.extent(1) != weights.extent(0) || bias.extent(0) != weights.extent(1))
    throw config_error("fc_forward_batch shape mismatch: x " + shape_to_string(x.shape()) +
                       ", weights " + shape_to_string(weights.shape()));
  const int n = x.extent(0), in = weights.extent(0), out = weights.extent(1);
  Tensor<T> y({n, out});
  detail::MapCM<T> xm(x.data(), n, in);
  detail::MapCM<T> wm(weights.data(), in, out);
  detail::MapM<T> ym(y.data(), n, out);
  ym.noalias() = xm * wm;
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), out);
  ym.rowwise() += bv;
  y.require_finite("fc_forward_batch");
  return y;
}

template <typename T>
struct FcGrads {
  Tensor<T> dx, dweights, dbias;
};

template <typename T>
FcGrads<T> fc_backward_batch(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy) {
  const int n = x.extent(0), in = weights.extent(0), out = weights.extent(1);
  FcGrads<T> g{Tensor<T>({n, in}), Tensor<T>({in, out}), Tensor<T>({out})};
  detail::MapCM<T> xm(x.data(), n, in);
  detail::MapCM<T> wm(weights.data(), in, out);
  detail::MapCM<T> dym(dy.data(), n, out);
  detail::MapM<T>(g.dx.data(), n, in).noalias() = dym * wm.transpose();
  detail::MapM<T>(g.dweights.data(), in, out).noalias() = xm.transpose() * dym;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.dbias.data(), out) = dym.colwise().sum();
  return g;
}

template <typename T>
Tensor<T> conv2d_forward_batch(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                               int stride, Padding padding);

/// 2-D convolution, NHWC layout. x (H, W, Cin), kernel (k, k, Cin, Cout).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         int stride, Padding padding) {
  if (x.rank() != 3) throw config_error("conv2d_forward expects a rank-3 input (H, W, Cin)");
  Tensor<T> batched = x.reshaped({1, x.extent(0), x.extent(1), x.extent(2)});
  Tensor<T> y = conv2d_forward_batch(batched, kernel, bias, stride, padding);
  return y.reshaped({y.extent(1), y.extent(2), y.extent(3)});
}

template <typename T>
Tensor<T> conv2d_forward_batch(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                               int stride, Padding padding) {
  if (x.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1)
    throw config_error("conv2d_forward_batch expects ranks 4/4/1");
  if (kernel.extent(0) != kernel.extent(1))
    throw config_error("conv2d kernels must be square");
  if (kernel.extent(2) != x.extent(3))
    throw config_error("conv2d channel mismatch: input " + shape_to_string(x.shape()) +
                       " vs kernel " + shape_to_string(kernel.shape()));
  if (bias.extent(0) != kernel.extent(3))
    throw config_error("conv2d bias size must equal output channels");
  const int n = x.extent(0), k = kernel.extent(0), cin = kernel.extent(2), cout = kernel.extent(3);
  const auto d = detail::conv_dims(x.extent(1), x.extent(2), k, stride, padding);
  Tensor<T> cols = detail::im2col(x, k, stride, d);
  Tensor<T> y({n, d.out_h, d.out_w, cout});
  const int rows = n * d.out_h * d.out_w;
  detail::MapCM<T> cm(cols.data(), rows, k * k * cin);
  detail::MapCM<T> km(kernel.data(), k * k * cin, cout);
  detail::MapM<T> ym(y.data(), rows, cout);
  ym.noalias() = cm * km;
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), cout);
  ym.rowwise() += bv;
  y.require_finite("conv2d_forward");
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx, dkernel, dbias;
};

template <typename T>
ConvGrads<T> conv2d_backward_batch(const Tensor<T>& x, const Tensor<T>& kernel,
                                   const Tensor<T>& dy, int stride, Padding padding) {
  const int n = x.extent(0), k = kernel.extent(0), cin = kernel.extent(2), cout = kernel.extent(3);
  const auto d = detail::conv_dims(x.extent(1), x.extent(2), k, stride, padding);
  const int rows = n * d.out_h * d.out_w;
  Tensor<T> cols = detail::im2col(x, k, stride, d);
  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(kernel.shape()), Tensor<T>({cout})};
  detail::MapCM<T> cm(cols.data(), rows, k * k * cin);
  detail::MapCM<T> km(kernel.data(), k * k * cin, cout);
  detail::MapCM<T> dym(dy.data(), rows, cout);
  detail::MapM<T>(g.dkernel.data(), k * k * cin, cout).noalias() = cm.transpose() * dym;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.dbias.data(), cout) = dym.colwise().sum();
  Tensor<T> dcols({rows, k * k * cin});
  detail::MapM<T>(dcols.data(), rows, k * k * cin).noalias() = dym * km.transpose();
  detail::col2im_add(dcols, k, stride, d, g.dx);
  return g;
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  const T* in = x.data();
  T* out = y.data();
  const std::int64_t n = x.numel();
  switch (kind) {
    case Activation::relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = T{1} / (T{1} + std::exp(-in[i]));
      break;
    case Activation::exp:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
      break;
  }
  y.require_finite("activation_forward");
  return y;
}

/// Gradient of an activation expressed through its own output y.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& dy, Activation kind) {
  Tensor<T> dx(y.shape());
  const T* yv = y.data();
  const T* g = dy.data();
  T* out = dx.data();
  const std::int64_t n = y.numel();
  switch (kind) {
    case Activation::relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = yv[i] > T{0} ? g[i] : T{0};
      break;
    case Activation::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = g[i] * yv[i] * (T{1} - yv[i]);
      break;
    case Activation::exp:
      for (std::int64_t i = 0; i < n; ++i) out[i] = g[i] * yv[i];
      break;
  }
  return dx;
}

}  // namespace cadnet
