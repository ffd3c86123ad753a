#pragma once

#include "zerolight/image.hpp"

#include <string>
#include <vector>

namespace zerolight {

/// Per-iteration, per-pixel, per-channel curve coefficients.
///
/// Stored as a (3 * n_iterations) x (H * W) planar buffer; iteration n owns
/// rows [3n, 3n + 3). This is exactly the layout of the estimator head.
template <typename Scalar>
class CurveMaps {
 public:
  CurveMaps() = default;

  CurveMaps(int n_iterations, int height, int width)
      : n_iterations_(n_iterations), height_(height), width_(width) {
    if (n_iterations < 1) throw std::invalid_argument("CurveMaps: n_iterations must be >= 1");
    alpha_ = Planar<Scalar>::Zero(3 * n_iterations, static_cast<Eigen::Index>(height) * width);
  }

  CurveMaps(int n_iterations, int height, int width, Planar<Scalar> alpha)
      : n_iterations_(n_iterations), height_(height), width_(width), alpha_(std::move(alpha)) {
    if (n_iterations < 1) throw std::invalid_argument("CurveMaps: n_iterations must be >= 1");
    if (alpha_.rows() != 3 * n_iterations ||
        alpha_.cols() != static_cast<Eigen::Index>(height) * width) {
      throw std::invalid_argument("CurveMaps: buffer shape does not match dimensions");
    }
  }

  int n_iterations() const { return n_iterations_; }
  int height() const { return height_; }
  int width() const { return width_; }

  Planar<Scalar>& alpha() { return alpha_; }
  const Planar<Scalar>& alpha() const { return alpha_; }

  auto slice(int n) { return alpha_.middleRows(3 * n, 3); }
  auto slice(int n) const { return alpha_.middleRows(3 * n, 3); }

  /// Iteration n as an image-shaped value (copy).
  Image<Scalar> slice_image(int n) const { return Image<Scalar>(height_, width_, slice(n)); }

  bool matches(const Image<Scalar>& img) const {
    return img.height() == height_ && img.width() == width_;
  }

 private:
  int n_iterations_ = 0;
  int height_ = 0;
  int width_ = 0;
  Planar<Scalar> alpha_;
};

using CurveMapsf = CurveMaps<float>;
using CurveMapsd = CurveMaps<double>;

namespace detail {

template <typename Derived>
void check_alpha(const Eigen::ArrayBase<Derived>& alpha) {
  if (!alpha.isFinite().all()) throw std::invalid_argument("curve: non-finite alpha");
  using S = typename Derived::Scalar;
  if ((alpha < S(-1)).any() || (alpha > S(1)).any()) {
    throw std::invalid_argument("curve: alpha outside [-1, 1]");
  }
}

}  // namespace detail

/// One quadratic curve step: x + alpha * x * (1 - x), elementwise.
template <typename Scalar, typename Derived>
Image<Scalar> apply_curve_step(const Image<Scalar>& image, const Eigen::ArrayBase<Derived>& alpha) {
  validate_image(image, "apply_curve_step");
  if (alpha.rows() != 3 || alpha.cols() != image.pixel_count()) {
    throw std::invalid_argument("apply_curve_step: alpha shape does not match image");
  }
  detail::check_alpha(alpha);
  const auto& x = image.planes();
  return Image<Scalar>(image.height(), image.width(), x + alpha.derived() * x * (Scalar(1) - x));
}

template <typename Scalar>
Image<Scalar> apply_curve_step(const Image<Scalar>& image, const Image<Scalar>& alpha) {
  require_same_shape(image, alpha, "apply_curve_step");
  return apply_curve_step(image, alpha.planes());
}

/// Applies all iterations of the curve. Interior values stay in [0, 1]
/// analytically; the final result is clamped once to absorb rounding.
template <typename Scalar>
Image<Scalar> apply_curve(const Image<Scalar>& image, const CurveMaps<Scalar>& maps) {
  validate_image(image, "apply_curve");
  if (!maps.matches(image)) throw std::invalid_argument("apply_curve: maps shape does not match image");
  detail::check_alpha(maps.alpha());
  Planar<Scalar> x = image.planes();
  for (int n = 0; n < maps.n_iterations(); ++n) {
    x += maps.slice(n) * x * (Scalar(1) - x);
  }
  return Image<Scalar>(image.height(), image.width(), x.cwiseMax(Scalar(0)).cwiseMin(Scalar(1)));
}

template <typename Scalar>
struct CurveGradients {
  Image<Scalar> image;
  CurveMaps<Scalar> maps;
};

/// Vector-Jacobian product of apply_curve. The final clamp is treated as the
/// identity (it only removes rounding drift).
template <typename Scalar>
CurveGradients<Scalar> apply_curve_backward(const Image<Scalar>& image, const CurveMaps<Scalar>& maps,
                                            const Image<Scalar>& grad_output) {
  require_same_shape(image, grad_output, "apply_curve_backward");
  const int n_iter = maps.n_iterations();
  std::vector<Planar<Scalar>> inputs;
  inputs.reserve(n_iter);
  Planar<Scalar> x = image.planes();
  for (int n = 0; n < n_iter; ++n) {
    inputs.push_back(x);
    x += maps.slice(n) * x * (Scalar(1) - x);
  }
  CurveGradients<Scalar> grads{Image<Scalar>(image.height(), image.width()),
                               CurveMaps<Scalar>(n_iter, image.height(), image.width())};
  Planar<Scalar> g = grad_output.planes();
  for (int n = n_iter - 1; n >= 0; --n) {
    const auto& xin = inputs[n];
    grads.maps.slice(n) = g * xin * (Scalar(1) - xin);
    g = g * (Scalar(1) + maps.slice(n) * (Scalar(1) - Scalar(2) * xin));
  }
  grads.image.planes() = g;
  return grads;
}

}  // namespace zerolight
