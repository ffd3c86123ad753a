#pragma once

#include "zerolight/image.hpp"

#include <Eigen/Core>

namespace zerolight {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// 3x3, stride 1, zero padding 1. Column layout of the unfolded matrix is
// (c * 9 + ky * 3 + kx), matching a [out][in][ky][kx] weight tensor.
template <typename Scalar>
RowMatrix<Scalar> im2col3x3(const Planar<Scalar>& in, int h, int w) {
  const Eigen::Index channels = in.rows();
  const Eigen::Index n = static_cast<Eigen::Index>(h) * w;
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(channels * 9, n);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const Scalar* src = in.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x_begin = dx < 0 ? 1 : 0;
        const int x_end = dx > 0 ? w - 1 : w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const Scalar* srow = src + static_cast<Eigen::Index>(sy) * w + dx;
          Scalar* drow = dst + static_cast<Eigen::Index>(y) * w;
          for (int x = x_begin; x < x_end; ++x) drow[x] = srow[x];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Planar<Scalar> col2im3x3(const RowMatrix<Scalar>& cols, Eigen::Index channels, int h, int w) {
  Planar<Scalar> out = Planar<Scalar>::Zero(channels, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index c = 0; c < channels; ++c) {
    Scalar* dst = out.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x_begin = dx < 0 ? 1 : 0;
        const int x_end = dx > 0 ? w - 1 : w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          Scalar* drow = dst + static_cast<Eigen::Index>(sy) * w + dx;
          const Scalar* srow = src + static_cast<Eigen::Index>(y) * w;
          for (int x = x_begin; x < x_end; ++x) drow[x] += srow[x];
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// 3x3 same-padding convolution. weight is out x (in * 9), bias has `out`
/// entries.
template <typename Scalar, typename WeightT, typename BiasT>
Planar<Scalar> conv3x3(const Planar<Scalar>& in, int h, int w, const Eigen::MatrixBase<WeightT>& weight,
                       const Eigen::MatrixBase<BiasT>& bias) {
  const RowMatrix<Scalar> cols = detail::im2col3x3(in, h, w);
  RowMatrix<Scalar> out = weight * cols;
  out.colwise() += bias;
  return out.array();
}

template <typename Scalar>
struct Conv3x3Gradients {
  RowMatrix<Scalar> weight;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bias;
  Planar<Scalar> input;
};

/// Backward pass of conv3x3 given the gradient w.r.t. its (pre-activation)
/// output. The input gradient is only formed when requested.
template <typename Scalar, typename WeightT>
Conv3x3Gradients<Scalar> conv3x3_backward(const Planar<Scalar>& in, int h, int w,
                                          const Eigen::MatrixBase<WeightT>& weight,
                                          const Planar<Scalar>& grad_out, bool need_input_grad) {
  Conv3x3Gradients<Scalar> g;
  const RowMatrix<Scalar> cols = detail::im2col3x3(in, h, w);
  g.weight = grad_out.matrix() * cols.transpose();
  g.bias = grad_out.matrix().rowwise().sum();
  if (need_input_grad) {
    const RowMatrix<Scalar> grad_cols = weight.transpose() * grad_out.matrix();
    g.input = detail::col2im3x3<Scalar>(grad_cols, in.rows(), h, w);
  }
  return g;
}

}  // namespace zerolight
