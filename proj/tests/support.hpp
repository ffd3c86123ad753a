#pragma once

#include "zerolight/curve.hpp"
#include "zerolight/encoder.hpp"
#include "zerolight/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>

namespace zerolight::testing {

inline const std::filesystem::path kDataDir = ZEROLIGHT_TEST_DATA;
inline const std::filesystem::path kAssetsDir = ZEROLIGHT_ASSETS;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "zl") {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / (tag + "_" + std::to_string(rd()));
      if (std::filesystem::create_directories(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

template <typename Scalar>
Image<Scalar> random_image(int h, int w, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image<Scalar> img(h, w);
  for (Eigen::Index i = 0; i < img.planes().size(); ++i) img.planes().data()[i] = static_cast<Scalar>(u(rng));
  return img;
}

template <typename Scalar>
CurveMaps<Scalar> random_maps(int n, int h, int w, std::uint64_t seed, double bound = 0.9) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  CurveMaps<Scalar> maps(n, h, w);
  for (Eigen::Index i = 0; i < maps.alpha().size(); ++i) maps.alpha().data()[i] = static_cast<Scalar>(u(rng));
  return maps;
}

/// Smooth low-light test scene: gradients, a few blobs and mild texture.
inline Imagef synthetic_scene(int h, int w, std::uint64_t seed, double gain = 0.25) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double fx = 0.02 + 0.1 * u(rng), fy = 0.02 + 0.1 * u(rng), ph = 6.28 * u(rng);
  const double tint[3] = {0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng)};
  Imagef img(h, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = 0.5 + 0.35 * std::sin(fx * x + ph) * std::cos(fy * y + 0.5 * c) +
                         0.15 * std::sin(0.9 * x + 0.7 * y + c);
        img(c, y, x) = static_cast<float>(std::clamp(gain * tint[c] * v, 0.0, 1.0));
      }
    }
  }
  return img;
}

/// Central difference of f with respect to one scalar, restored afterwards.
template <typename Scalar>
double central_difference(Scalar& x, const std::function<double()>& f, double h = 1e-4) {
  const Scalar saved = x;
  x = saved + static_cast<Scalar>(h);
  const double fp = f();
  x = saved - static_cast<Scalar>(h);
  const double fm = f();
  x = saved;
  return (fp - fm) / (2 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Maps every image to the same embedding and every text/prompt to a single
/// other one: all cosines tie.
template <typename Scalar>
class ConstantEncoder final : public Encoder<Scalar> {
 public:
  explicit ConstantEncoder(int dim = 8) : dim_(dim) {}
  std::string variant() const override { return "constant"; }
  int embedding_dim() const override { return dim_; }
  int token_width() const override { return 4; }
  int max_prompt_tokens() const override { return 32; }
  int input_resolution() const override { return 8; }
  ImageEncoding<Scalar> encode_image(const Image<Scalar>& image) const override {
    const int h = image.height(), w = image.width();
    return {unit(0), [h, w](const Vector<Scalar>&) { return Image<Scalar>(h, w); }};
  }
  Vector<Scalar> encode_text(std::string_view) const override { return unit(1); }
  PromptEncoding<Scalar> encode_prompt(const TokenMatrix<Scalar>& p) const override {
    const auto rows = p.rows(), cols = p.cols();
    return {unit(1), [rows, cols](const Vector<Scalar>&) { return TokenMatrix<Scalar>::Zero(rows, cols).eval(); }};
  }
  std::uint64_t weights_checksum() const override { return 0; }

 private:
  Vector<Scalar> unit(int i) const {
    Vector<Scalar> v = Vector<Scalar>::Zero(dim_);
    v[i] = 1;
    return v;
  }
  int dim_;
};

}  // namespace zerolight::testing
