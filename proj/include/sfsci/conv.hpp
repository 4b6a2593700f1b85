#pragma once

// Same-size 2-D convolution (stride 1, zero padding) over (channel, row, col)
// tensors, lowered to a GEMM through im2col.

#include <Eigen/Core>

#include "sfsci/autodiff.hpp"

namespace sfsci {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

// col has shape (channels * k * k, rows * cols).
template <typename T>
void im2col(const Tensor<T>& x, std::size_t k, std::vector<T>& col) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const long pad = static_cast<long>(k / 2);
  col.assign(c * k * k * h * w, T(0));
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        T* dst = col.data() + row * h * w;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const T* src = &x(ci, static_cast<std::size_t>(sy), 0);
          const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(static_cast<long>(w), static_cast<long>(w) - dx);
          for (long xx = x0; xx < x1; ++xx) dst[y * w + static_cast<std::size_t>(xx)] = src[xx + dx];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, std::size_t k, Tensor<T>& gx) {
  const std::size_t c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const long pad = static_cast<long>(k / 2);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx, ++row) {
        const T* src = col.data() + row * h * w;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          T* dst = &gx(ci, static_cast<std::size_t>(sy), 0);
          const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(static_cast<long>(w), static_cast<long>(w) - dx);
          for (long xx = x0; xx < x1; ++xx) dst[xx + dx] += src[y * w + static_cast<std::size_t>(xx)];
        }
      }
    }
  }
}

}  // namespace detail

/// Forward value only; weight has shape (out, in, k, k), bias (out).
template <typename T>
Tensor<T> conv2d_value(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3) ||
      weight.dim(2) % 2 == 0 || bias.size() != weight.dim(0)) {
    throw DimensionError("conv2d: incompatible input " + Tensor<T>::shape_string(x.shape()) + " and weight " +
                         Tensor<T>::shape_string(weight.shape()));
  }
  const std::size_t co = weight.dim(0), ci = weight.dim(1), k = weight.dim(2);
  const std::size_t hw = x.dim(1) * x.dim(2);
  Tensor<T> out({co, x.dim(1), x.dim(2)});
  detail::MapMatrix<T> om(out.data(), co, hw);
  detail::ConstMapMatrix<T> wm(weight.data(), co, ci * k * k);
  if (k == 1) {
    detail::ConstMapMatrix<T> xm(x.data(), ci, hw);
    om.noalias() = wm * xm;
  } else {
    std::vector<T> col;
    detail::im2col(x, k, col);
    detail::ConstMapMatrix<T> cm(col.data(), ci * k * k, hw);
    om.noalias() = wm * cm;
  }
  for (std::size_t o = 0; o < co; ++o) {
    const T b = bias[o];
    for (auto& v : out.plane(o)) v += b;
  }
  return out;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  Tensor<T> out = conv2d_value(x.value(), weight.value(), bias.value());
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return Var<T>::make(std::move(out), {x, weight, bias}, [xn, wn, bn](const Tensor<T>& g) {
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& wv = wn->value;
    const std::size_t co = wv.dim(0), ci = wv.dim(1), k = wv.dim(2);
    const std::size_t hw = xv.dim(1) * xv.dim(2);
    detail::ConstMapMatrix<T> gm(g.data(), co, hw);
    if (bn->requires_grad) {
      Tensor<T> gb({co});
      // plain loop: Eigen's vectorised sum depends on buffer alignment
      for (std::size_t o = 0; o < co; ++o) {
        double acc = 0;
        for (T v : g.plane(o)) acc += static_cast<double>(v);
        gb[o] = static_cast<T>(acc);
      }
      bn->accumulate(gb);
    }
    if (wn->requires_grad) {
      Tensor<T> gw(wv.shape());
      detail::MapMatrix<T> gwm(gw.data(), co, ci * k * k);
      if (k == 1) {
        detail::ConstMapMatrix<T> xm(xv.data(), ci, hw);
        gwm.noalias() = gm * xm.transpose();
      } else {
        std::vector<T> col;
        detail::im2col(xv, k, col);
        detail::ConstMapMatrix<T> cm(col.data(), ci * k * k, hw);
        gwm.noalias() = gm * cm.transpose();
      }
      wn->accumulate(gw);
    }
    if (xn->requires_grad) {
      detail::ConstMapMatrix<T> wm(wv.data(), co, ci * k * k);
      Tensor<T> gx(xv.shape());
      if (k == 1) {
        detail::MapMatrix<T> gxm(gx.data(), ci, hw);
        gxm.noalias() = wm.transpose() * gm;
      } else {
        std::vector<T> gcol(ci * k * k * hw);
        detail::MapMatrix<T> gcm(gcol.data(), ci * k * k, hw);
        gcm.noalias() = wm.transpose() * gm;
        detail::col2im_add(gcol, k, gx);
      }
      xn->accumulate(gx);
    }
  });
}

/// Multiply-accumulate count of one same-size conv on an h x w input.
inline std::size_t conv2d_macs(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t h, std::size_t w) {
  return k * k * in_ch * out_ch * h * w;
}

}  // namespace sfsci
