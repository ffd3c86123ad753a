#include "zerolight/plot.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace zerolight {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};

}  // namespace

void render_brightness_histogram(const DatasetStats& stats, const std::filesystem::path& path, int width,
                                 int height) {
  if (width < 200 || height < 150) throw std::invalid_argument("plot: canvas too small");
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 60, right = 20, top = 20, bottom = 50;
  const int pw = width - left - right;
  const int ph = height - top - bottom;

  double peak = 0;
  for (const auto& d : stats.datasets) {
    if (d.images == 0) continue;
    for (auto h : d.histogram) peak = std::max(peak, static_cast<double>(h) / d.images);
  }
  if (peak <= 0) peak = 1;

  const cv::Scalar axis(0, 0, 0);
  cv::line(canvas, {left, top + ph}, {left + pw, top + ph}, axis, 1);
  cv::line(canvas, {left, top}, {left, top + ph}, axis, 1);

  const int n = static_cast<int>(stats.datasets.size());
  const double bin_w = static_cast<double>(pw) / kBrightnessBins;
  const double bar_w = n > 0 ? bin_w * 0.8 / n : bin_w;
  for (int di = 0; di < n; ++di) {
    const auto& d = stats.datasets[static_cast<std::size_t>(di)];
    if (d.images == 0) continue;
    const cv::Scalar color = kPalette[di % 8];
    for (int b = 0; b < kBrightnessBins; ++b) {
      const double frac = static_cast<double>(d.histogram[static_cast<std::size_t>(b)]) / d.images;
      const int x0 = left + static_cast<int>(b * bin_w + bin_w * 0.1 + di * bar_w);
      const int x1 = std::max(x0 + 1, static_cast<int>(x0 + bar_w));
      const int y0 = top + ph - static_cast<int>(frac / peak * ph);
      if (frac > 0) cv::rectangle(canvas, {x0, y0}, {x1, top + ph}, color, cv::FILLED);
    }
    char legend[160];
    std::snprintf(legend, sizeof(legend), "%s (%.1f%%)", d.id.c_str(), 100.0 * d.proportion);
    const int ly = top + 16 + 18 * di;
    cv::rectangle(canvas, {left + pw - 220, ly - 10}, {left + pw - 208, ly + 2}, color, cv::FILLED);
    cv::putText(canvas, legend, {left + pw - 200, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);
  }
  for (int t = 0; t <= 4; ++t) {
    const int x = left + pw * t / 4;
    char label[16];
    std::snprintf(label, sizeof(label), "%.2f", t / 4.0);
    cv::line(canvas, {x, top + ph}, {x, top + ph + 4}, axis, 1);
    cv::putText(canvas, label, {x - 14, top + ph + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  }
  cv::putText(canvas, "mean image brightness", {left + pw / 2 - 80, height - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              axis, 1, cv::LINE_AA);
  char ymax[32];
  std::snprintf(ymax, sizeof(ymax), "%.2f", peak);
  cv::putText(canvas, ymax, {6, top + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  cv::putText(canvas, "0", {40, top + ph}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw std::runtime_error("cannot write plot " + path.string());
}

}  // namespace zerolight
