#pragma once

#include "zerolight/curve.hpp"
#include "zerolight/image.hpp"

#include <cmath>
#include <stdexcept>

// Zero-reference losses: every term is computed from the enhanced image, the
// input image, or the curve maps alone. Each loss comes in a value-only form
// and a *_grad form returning the value together with its input gradient.

namespace zerolight {

struct ExposureConfig {
  int patch_size = 16;
  double target = 0.6;

  void validate() const {
    if (patch_size < 1) throw std::invalid_argument("ExposureConfig: patch_size must be >= 1");
    if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("ExposureConfig: target must be in (0, 1)");
  }
};

struct SpatialConfig {
  int region_size = 4;

  void validate() const {
    if (region_size < 1) throw std::invalid_argument("SpatialConfig: region_size must be >= 1");
  }
};

template <typename Scalar, typename Grad>
struct LossWithGrad {
  Scalar value{};
  Grad grad;
};

namespace detail {

template <typename Scalar>
Scalar sign(Scalar v) {
  return static_cast<Scalar>((v > Scalar(0)) - (v < Scalar(0)));
}

/// Mean of the three channels per pixel, then averaged over non-overlapping
/// size x size blocks (trailing partial blocks dropped). Returns a
/// rows x cols array of block means.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> block_means(const Image<Scalar>& img,
                                                                                 int size) {
  const int rows = img.height() / size;
  const int cols = img.width() / size;
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> means(rows, cols);
  const Scalar norm = Scalar(1) / static_cast<Scalar>(3 * size * size);
  for (int by = 0; by < rows; ++by) {
    for (int bx = 0; bx < cols; ++bx) {
      Scalar s = 0;
      for (int c = 0; c < 3; ++c) s += img.channel(c).block(by * size, bx * size, size, size).sum();
      means(by, bx) = s * norm;
    }
  }
  return means;
}

/// Spreads a block-mean gradient back to pixels (adjoint of block_means).
template <typename Scalar>
Image<Scalar> block_means_backward(const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& g,
                                   int height, int width, int size) {
  Image<Scalar> out(height, width);
  const Scalar norm = Scalar(1) / static_cast<Scalar>(3 * size * size);
  for (int c = 0; c < 3; ++c) {
    auto ch = out.channel(c);
    for (int by = 0; by < g.rows(); ++by) {
      for (int bx = 0; bx < g.cols(); ++bx) {
        ch.block(by * size, bx * size, size, size).setConstant(g(by, bx) * norm);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Mean absolute deviation of 16x16 patch intensities from the target
/// exposure level.
template <typename Scalar>
LossWithGrad<Scalar, Image<Scalar>> exposure_loss_grad(const Image<Scalar>& enhanced,
                                                       const ExposureConfig& cfg = {}) {
  cfg.validate();
  if (enhanced.height() < cfg.patch_size || enhanced.width() < cfg.patch_size) {
    throw std::invalid_argument("exposure_loss: image smaller than one patch");
  }
  const auto means = detail::block_means(enhanced, cfg.patch_size);
  const Scalar target = static_cast<Scalar>(cfg.target);
  const Scalar count = static_cast<Scalar>(means.size());
  LossWithGrad<Scalar, Image<Scalar>> out;
  out.value = (means - target).abs().sum() / count;
  const auto g = means.unaryExpr([&](Scalar m) { return detail::sign(m - target) / count; });
  out.grad = detail::block_means_backward<Scalar>(g, enhanced.height(), enhanced.width(), cfg.patch_size);
  return out;
}

template <typename Scalar>
Scalar exposure_loss(const Image<Scalar>& enhanced, const ExposureConfig& cfg = {}) {
  cfg.validate();
  if (enhanced.height() < cfg.patch_size || enhanced.width() < cfg.patch_size) {
    throw std::invalid_argument("exposure_loss: image smaller than one patch");
  }
  const auto means = detail::block_means(enhanced, cfg.patch_size);
  return (means - static_cast<Scalar>(cfg.target)).abs().sum() / static_cast<Scalar>(means.size());
}

template <typename Scalar>
struct SpatialGradients {
  Image<Scalar> enhanced;
  Image<Scalar> input;
};

/// Preserves the contrast between each region and its 4-connected
/// neighbours. Border regions only count the neighbours that exist.
template <typename Scalar>
LossWithGrad<Scalar, SpatialGradients<Scalar>> spatial_consistency_loss_grad(const Image<Scalar>& enhanced,
                                                                             const Image<Scalar>& input,
                                                                             const SpatialConfig& cfg = {}) {
  cfg.validate();
  require_same_shape(enhanced, input, "spatial_consistency_loss");
  if (enhanced.height() < cfg.region_size || enhanced.width() < cfg.region_size) {
    throw std::invalid_argument("spatial_consistency_loss: image smaller than one region");
  }
  const auto e = detail::block_means(enhanced, cfg.region_size);
  const auto o = detail::block_means(input, cfg.region_size);
  using Grid = std::decay_t<decltype(e)>;
  Grid ge = Grid::Zero(e.rows(), e.cols());
  Grid go = Grid::Zero(e.rows(), e.cols());
  const Scalar regions = static_cast<Scalar>(e.size());
  Scalar total = 0;
  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};
  for (Eigen::Index y = 0; y < e.rows(); ++y) {
    for (Eigen::Index x = 0; x < e.cols(); ++x) {
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index ny = y + dy[k];
        const Eigen::Index nx = x + dx[k];
        if (ny < 0 || nx < 0 || ny >= e.rows() || nx >= e.cols()) continue;
        const Scalar de = e(y, x) - e(ny, nx);
        const Scalar dorig = o(y, x) - o(ny, nx);
        const Scalar t = std::abs(de) - std::abs(dorig);
        total += t * t;
        const Scalar se = Scalar(2) * t * detail::sign(de) / regions;
        const Scalar so = -Scalar(2) * t * detail::sign(dorig) / regions;
        ge(y, x) += se;
        ge(ny, nx) -= se;
        go(y, x) += so;
        go(ny, nx) -= so;
      }
    }
  }
  LossWithGrad<Scalar, SpatialGradients<Scalar>> out;
  out.value = total / regions;
  out.grad.enhanced = detail::block_means_backward<Scalar>(ge, enhanced.height(), enhanced.width(), cfg.region_size);
  out.grad.input = detail::block_means_backward<Scalar>(go, input.height(), input.width(), cfg.region_size);
  return out;
}

template <typename Scalar>
Scalar spatial_consistency_loss(const Image<Scalar>& enhanced, const Image<Scalar>& input,
                                const SpatialConfig& cfg = {}) {
  return spatial_consistency_loss_grad(enhanced, input, cfg).value;
}

/// Gray-world colour loss: squared differences between global channel means.
template <typename Scalar>
LossWithGrad<Scalar, Image<Scalar>> color_constancy_loss_grad(const Image<Scalar>& enhanced) {
  if (enhanced.empty()) throw std::invalid_argument("color_constancy_loss: zero-area image");
  const auto& p = enhanced.planes();
  const Scalar r = p.row(0).mean();
  const Scalar g = p.row(1).mean();
  const Scalar b = p.row(2).mean();
  LossWithGrad<Scalar, Image<Scalar>> out;
  out.value = (r - g) * (r - g) + (r - b) * (r - b) + (g - b) * (g - b);
  const Scalar n = static_cast<Scalar>(enhanced.pixel_count());
  out.grad = Image<Scalar>(enhanced.height(), enhanced.width());
  out.grad.planes().row(0).setConstant(Scalar(2) * ((r - g) + (r - b)) / n);
  out.grad.planes().row(1).setConstant(Scalar(2) * ((g - r) + (g - b)) / n);
  out.grad.planes().row(2).setConstant(Scalar(2) * ((b - r) + (b - g)) / n);
  return out;
}

template <typename Scalar>
Scalar color_constancy_loss(const Image<Scalar>& enhanced) {
  return color_constancy_loss_grad(enhanced).value;
}

/// Illumination smoothness on the curve maps: per pixel
/// (|dx A_c| + |dy A_c|)^2 summed over channels, averaged over pixels and
/// iterations. Forward differences; the last row/column has zero gradient.
template <typename Scalar>
LossWithGrad<Scalar, CurveMaps<Scalar>> illumination_smoothness_loss_grad(const CurveMaps<Scalar>& maps) {
  const int h = maps.height();
  const int w = maps.width();
  if (h == 0 || w == 0) throw std::invalid_argument("illumination_smoothness_loss: zero-area maps");
  const Scalar norm = Scalar(1) / (static_cast<Scalar>(h) * w * maps.n_iterations());
  LossWithGrad<Scalar, CurveMaps<Scalar>> out{Scalar(0), CurveMaps<Scalar>(maps.n_iterations(), h, w)};
  for (Eigen::Index row = 0; row < maps.alpha().rows(); ++row) {
    ConstPlaneMap<Scalar> a(maps.alpha().row(row).data(), h, w);
    PlaneMap<Scalar> g(out.grad.alpha().row(row).data(), h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Scalar gx = x + 1 < w ? a(y, x + 1) - a(y, x) : Scalar(0);
        const Scalar gy = y + 1 < h ? a(y + 1, x) - a(y, x) : Scalar(0);
        const Scalar m = std::abs(gx) + std::abs(gy);
        out.value += m * m;
        const Scalar s = Scalar(2) * m * norm;
        if (x + 1 < w) {
          g(y, x + 1) += s * detail::sign(gx);
          g(y, x) -= s * detail::sign(gx);
        }
        if (y + 1 < h) {
          g(y + 1, x) += s * detail::sign(gy);
          g(y, x) -= s * detail::sign(gy);
        }
      }
    }
  }
  out.value *= norm;
  return out;
}

template <typename Scalar>
Scalar illumination_smoothness_loss(const CurveMaps<Scalar>& maps) {
  return illumination_smoothness_loss_grad(maps).value;
}

}  // namespace zerolight
