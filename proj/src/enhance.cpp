#include "zerolight/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace zerolight {

Imagef enhance_image(const Imagef& image, const CurveNetworkf& net) {
  validate_image(image, "enhance");
  return enhance(image, net).enhanced;
}

int luma_level(double v) { return std::clamp(static_cast<int>(std::floor(v * 255.0 + 0.5)), 0, 255); }

std::array<std::size_t, 256> luma_histogram(const Imagef& image) {
  std::array<std::size_t, 256> hist{};
  const auto y = luma(image);
  for (Eigen::Index i = 0; i < y.size(); ++i) ++hist[static_cast<std::size_t>(luma_level(y[i]))];
  return hist;
}

Imagef histogram_equalization(const Imagef& image) {
  validate_image(image, "histogram_equalization");
  const auto hist = luma_histogram(image);
  const auto n = static_cast<std::size_t>(image.pixel_count());
  std::array<std::size_t, 256> cdf{};
  std::size_t acc = 0;
  for (int l = 0; l < 256; ++l) cdf[l] = acc += hist[l];
  std::size_t cdf_min = 0;
  for (int l = 0; l < 256; ++l) {
    if (hist[l] > 0) {
      cdf_min = cdf[l];
      break;
    }
  }
  if (n == cdf_min) return image;  // a single luma level: nothing to spread

  // Targets sit exactly on 8-bit levels so a second pass (or an 8-bit round
  // trip) sees each pixel at the level it was sent to.
  std::array<float, 256> lut{};
  for (int l = 0; l < 256; ++l) {
    const double f = cdf[l] < cdf_min ? 0.0
                                      : static_cast<double>(cdf[l] - cdf_min) / static_cast<double>(n - cdf_min);
    lut[l] = static_cast<float>(std::round(f * 255.0) / 255.0);
  }
  Imagef out = image;
  const auto y = luma(image);
  auto& p = out.planes();
  for (Eigen::Index i = 0; i < image.pixel_count(); ++i) {
    const float t = lut[static_cast<std::size_t>(luma_level(y[i]))];
    const float dy = t - y[i];
    // Shift every channel by the luma change; if that leaves [0, 1], pull the
    // colour toward gray at the target luma until it fits.
    float s = 1.0f;
    for (int c = 0; c < 3; ++c) {
      const float v = p(c, i) + dy - t;
      if (t + v > 1.0f) s = std::min(s, (1.0f - t) / v);
      if (t + v < 0.0f) s = std::min(s, -t / v);
    }
    for (int c = 0; c < 3; ++c) p(c, i) = std::clamp(t + s * (p(c, i) + dy - t), 0.0f, 1.0f);
  }
  return out;
}

double kl_to_uniform(const std::array<std::size_t, 256>& histogram, int bins) {
  if (bins < 1 || 256 % bins != 0) throw std::invalid_argument("kl_to_uniform: bins must divide 256");
  const int width = 256 / bins;
  std::vector<double> mass(static_cast<std::size_t>(bins), 0.0);
  double total = 0;
  for (int l = 0; l < 256; ++l) {
    mass[static_cast<std::size_t>(l / width)] += static_cast<double>(histogram[l]);
    total += static_cast<double>(histogram[l]);
  }
  if (!(total > 0)) return 0;
  double kl = 0;
  for (double m : mass) {
    if (m == 0) continue;
    const double p = m / total;
    kl += p * std::log(p * bins);
  }
  return kl;
}

}  // namespace zerolight
