#pragma once

#include "zerolight/image.hpp"

#include <algorithm>
#include <vector>

namespace zerolight {

namespace detail {

// Half-pixel-center sampling table for one axis (align_corners = false,
// no antialiasing): dst i reads src lo[i] and hi[i] with weight (1-t, t).
struct LinearAxis {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> t;
};

inline LinearAxis linear_axis(int in_size, int out_size) {
  LinearAxis axis;
  axis.lo.resize(out_size);
  axis.hi.resize(out_size);
  axis.t.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    double src = std::max(0.0, (i + 0.5) * scale - 0.5);
    int lo = std::min(static_cast<int>(src), in_size - 1);
    int hi = lo < in_size - 1 ? lo + 1 : lo;
    axis.lo[i] = lo;
    axis.hi[i] = hi;
    axis.t[i] = std::min(1.0, src - lo);
  }
  return axis;
}

}  // namespace detail

/// Bilinear resize of a channel-planar buffer. Linear in the input, so the
/// adjoint below is exact.
template <typename Scalar>
Planar<Scalar> resize_bilinear(const Planar<Scalar>& in, int in_h, int in_w, int out_h, int out_w) {
  if (in_h <= 0 || in_w <= 0 || out_h <= 0 || out_w <= 0) {
    throw std::invalid_argument("resize_bilinear: zero-area image");
  }
  if (in_h == out_h && in_w == out_w) return in;
  const auto ax = detail::linear_axis(in_w, out_w);
  const auto ay = detail::linear_axis(in_h, out_h);
  Planar<Scalar> out(in.rows(), static_cast<Eigen::Index>(out_h) * out_w);
  for (Eigen::Index c = 0; c < in.rows(); ++c) {
    const Scalar* src = in.row(c).data();
    Scalar* dst = out.row(c).data();
    for (int y = 0; y < out_h; ++y) {
      const Scalar ty = static_cast<Scalar>(ay.t[y]);
      const Scalar* r0 = src + static_cast<Eigen::Index>(ay.lo[y]) * in_w;
      const Scalar* r1 = src + static_cast<Eigen::Index>(ay.hi[y]) * in_w;
      for (int x = 0; x < out_w; ++x) {
        const Scalar tx = static_cast<Scalar>(ax.t[x]);
        const Scalar top = (1 - tx) * r0[ax.lo[x]] + tx * r0[ax.hi[x]];
        const Scalar bot = (1 - tx) * r1[ax.lo[x]] + tx * r1[ax.hi[x]];
        dst[static_cast<Eigen::Index>(y) * out_w + x] = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

/// Adjoint of resize_bilinear: maps a gradient w.r.t. the resized buffer
/// back onto the source grid.
template <typename Scalar>
Planar<Scalar> resize_bilinear_backward(const Planar<Scalar>& grad_out, int in_h, int in_w, int out_h,
                                        int out_w) {
  if (in_h == out_h && in_w == out_w) return grad_out;
  const auto ax = detail::linear_axis(in_w, out_w);
  const auto ay = detail::linear_axis(in_h, out_h);
  Planar<Scalar> grad_in = Planar<Scalar>::Zero(grad_out.rows(), static_cast<Eigen::Index>(in_h) * in_w);
  for (Eigen::Index c = 0; c < grad_out.rows(); ++c) {
    const Scalar* g = grad_out.row(c).data();
    Scalar* dst = grad_in.row(c).data();
    for (int y = 0; y < out_h; ++y) {
      const Scalar ty = static_cast<Scalar>(ay.t[y]);
      Scalar* r0 = dst + static_cast<Eigen::Index>(ay.lo[y]) * in_w;
      Scalar* r1 = dst + static_cast<Eigen::Index>(ay.hi[y]) * in_w;
      for (int x = 0; x < out_w; ++x) {
        const Scalar tx = static_cast<Scalar>(ax.t[x]);
        const Scalar v = g[static_cast<Eigen::Index>(y) * out_w + x];
        r0[ax.lo[x]] += (1 - ty) * (1 - tx) * v;
        r0[ax.hi[x]] += (1 - ty) * tx * v;
        r1[ax.lo[x]] += ty * (1 - tx) * v;
        r1[ax.hi[x]] += ty * tx * v;
      }
    }
  }
  return grad_in;
}

template <typename Scalar>
Image<Scalar> resize_bilinear(const Image<Scalar>& img, int out_h, int out_w) {
  return Image<Scalar>(out_h, out_w,
                       resize_bilinear(img.planes(), img.height(), img.width(), out_h, out_w));
}

}  // namespace zerolight
