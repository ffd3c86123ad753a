#include "zerolight/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace zerolight {

std::uint8_t quantize_unit(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(static_cast<double>(c) * 255.0 + 0.5));
}

std::vector<std::uint8_t> to_rgb8(const Imagef& image) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(image.pixel_count()) * 3);
  const auto& p = image.planes();
  for (Eigen::Index i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(i) * 3 + c] = quantize_unit(p(c, i));
  }
  return out;
}

Imagef from_rgb8(const std::uint8_t* rgb, int height, int width) {
  Imagef img(height, width);
  auto& p = img.planes();
  for (Eigen::Index i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) p(c, i) = static_cast<float>(rgb[i * 3 + c]) / 255.0f;
  }
  return img;
}

Imagef load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U);
  Imagef img(bgr.rows, bgr.cols);
  auto& p = img.planes();
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * bgr.cols + x;
      p(0, i) = row[3 * x + 2] / 255.0f;
      p(1, i) = row[3 * x + 1] / 255.0f;
      p(2, i) = row[3 * x + 0] / 255.0f;
    }
  }
  return img;
}

void save_image(const std::filesystem::path& path, const Imagef& image) {
  if (image.empty()) throw std::invalid_argument("save_image: zero-area image");
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  const auto& p = image.planes();
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * image.width() + x;
      row[3 * x + 0] = quantize_unit(p(2, i));
      row[3 * x + 1] = quantize_unit(p(1, i));
      row[3 * x + 2] = quantize_unit(p(0, i));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<int> params;
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") params = {cv::IMWRITE_JPEG_QUALITY, 95};
  if (!cv::imwrite(path.string(), bgr, params)) throw std::runtime_error("cannot write image " + path.string());
}

bool is_image_file(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace zerolight
