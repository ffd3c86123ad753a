#pragma once

#include "zerolight/data_pipeline.hpp"

#include <filesystem>

namespace zerolight {

/// Grouped bar chart of the per-dataset brightness histograms (fraction of
/// each dataset's images per bin), written as PNG.
void render_brightness_histogram(const DatasetStats& stats, const std::filesystem::path& path, int width = 960,
                                 int height = 540);

}  // namespace zerolight
