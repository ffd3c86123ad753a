#pragma once

#include "zerolight/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace zerolight {

/// Decodes an 8-bit PNG/JPEG (anything the codec backend reads) into RGB
/// intensities v / 255. Throws std::runtime_error on unreadable files.
Imagef load_image(const std::filesystem::path& path);

/// Encodes as 8-bit PNG or JPEG, chosen by extension. Values are clamped to
/// [0, 1] and quantized with round-half-up: floor(v * 255 + 0.5).
void save_image(const std::filesystem::path& path, const Imagef& image);

std::uint8_t quantize_unit(float v);

/// RGB-interleaved 8-bit buffer, row-major.
std::vector<std::uint8_t> to_rgb8(const Imagef& image);
Imagef from_rgb8(const std::uint8_t* rgb, int height, int width);

bool is_image_file(const std::filesystem::path& path);

/// Every image file under dir (recursive), sorted by path.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace zerolight
