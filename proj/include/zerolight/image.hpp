#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace zerolight {

/// Channel-planar storage: one row per channel, one column per pixel
/// (row-major pixel index y * width + x). Rows are contiguous, so a channel
/// can be viewed as an H x W matrix and a whole image multiplies directly
/// against convolution weights.
template <typename Scalar>
using Planar = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using PlaneMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename Scalar>
using ConstPlaneMap =
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// H x W x 3 RGB image with intensities nominally in [0, 1].
///
/// The type itself does not enforce the range so that gradients and
/// intermediate differences can share it; operations that require valid
/// intensities call validate_image() at their boundary.
template <typename Scalar>
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;

  Image(int height, int width) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("Image: negative dimensions");
    planes_ = Planar<Scalar>::Zero(kChannels, static_cast<Eigen::Index>(height) * width);
  }

  Image(int height, int width, Planar<Scalar> planes)
      : height_(height), width_(width), planes_(std::move(planes)) {
    if (planes_.rows() != kChannels ||
        planes_.cols() != static_cast<Eigen::Index>(height) * width) {
      throw std::invalid_argument("Image: plane shape does not match dimensions");
    }
  }

  static Image constant(int height, int width, Scalar value) {
    Image img(height, width);
    img.planes_.setConstant(value);
    return img;
  }

  static Image constant(int height, int width, Scalar r, Scalar g, Scalar b) {
    Image img(height, width);
    img.planes_.row(0).setConstant(r);
    img.planes_.row(1).setConstant(g);
    img.planes_.row(2).setConstant(b);
    return img;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index pixel_count() const { return static_cast<Eigen::Index>(height_) * width_; }
  bool empty() const { return height_ == 0 || width_ == 0; }

  Planar<Scalar>& planes() { return planes_; }
  const Planar<Scalar>& planes() const { return planes_; }

  Scalar& operator()(int c, int y, int x) {
    return planes_(c, static_cast<Eigen::Index>(y) * width_ + x);
  }
  Scalar operator()(int c, int y, int x) const {
    return planes_(c, static_cast<Eigen::Index>(y) * width_ + x);
  }

  PlaneMap<Scalar> channel(int c) { return PlaneMap<Scalar>(planes_.row(c).data(), height_, width_); }
  ConstPlaneMap<Scalar> channel(int c) const {
    return ConstPlaneMap<Scalar>(planes_.row(c).data(), height_, width_);
  }

  Scalar mean() const { return planes_.size() == 0 ? Scalar(0) : planes_.mean(); }

  template <typename Other>
  Image<Other> cast() const {
    return Image<Other>(height_, width_, planes_.template cast<Other>());
  }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && (a.planes_ == b.planes_).all();
  }

 private:
  int height_ = 0;
  int width_ = 0;
  Planar<Scalar> planes_ = Planar<Scalar>::Zero(kChannels, 0);
};

using Imagef = Image<float>;
using Imaged = Image<double>;

/// Throws std::invalid_argument unless the image is non-empty, finite and
/// inside [0, 1].
template <typename Scalar>
void validate_image(const Image<Scalar>& img, const char* what = "image") {
  if (img.empty()) throw std::invalid_argument(std::string(what) + ": zero-area image");
  const auto& p = img.planes();
  if (!p.isFinite().all()) throw std::invalid_argument(std::string(what) + ": non-finite value");
  if ((p < Scalar(0)).any() || (p > Scalar(1)).any()) {
    throw std::invalid_argument(std::string(what) + ": value outside [0, 1]");
  }
}

template <typename Scalar>
void require_same_shape(const Image<Scalar>& a, const Image<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) +
                                "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                                "x" + std::to_string(b.width()) + ")");
  }
}

/// Per-pixel BT.601 luma (0.299 R + 0.587 G + 0.114 B).
template <typename Scalar>
Eigen::Array<Scalar, 1, Eigen::Dynamic> luma(const Image<Scalar>& img) {
  const auto& p = img.planes();
  return Scalar(0.299) * p.row(0) + Scalar(0.587) * p.row(1) + Scalar(0.114) * p.row(2);
}

}  // namespace zerolight
