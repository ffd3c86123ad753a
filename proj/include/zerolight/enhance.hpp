#pragma once

#include "zerolight/curve_net.hpp"
#include "zerolight/image.hpp"

#include <array>
#include <cstddef>

namespace zerolight {

/// Runs the estimator at the image's native resolution and applies the
/// predicted curves.
Imagef enhance_image(const Imagef& image, const CurveNetworkf& net);

/// 8-bit level of a luma value: round-half-up of v * 255, clamped.
int luma_level(double v);

/// 256-bin histogram of BT.601 luma levels.
std::array<std::size_t, 256> luma_histogram(const Imagef& image);

/// Global histogram equalization on BT.601 luma. Each luma level l maps to
/// (cdf(l) - cdf_min) / (N - cdf_min), rounded to the nearest 8-bit level.
/// The luma change is added to every channel so Cb and Cr stay put; pixels
/// that would leave [0, 1] are desaturated toward gray at the target luma
/// instead of clipped. A constant image comes back unchanged.
Imagef histogram_equalization(const Imagef& image);

/// KL(p || uniform) in nats after merging the 256 levels into `bins` equal
/// groups (bins must divide 256). At 256 bins any level-wise remap, including
/// equalization, can only raise it; coarser bins show the flattening.
double kl_to_uniform(const std::array<std::size_t, 256>& histogram, int bins = 256);

}  // namespace zerolight
