#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "shmt/image.hpp"

namespace shmt::png {

// 8-bit PNG in, [0,1] floats out. Grey PNGs load as 1 channel, RGB/RGBA as 3
// (alpha dropped).
Image read(const std::filesystem::path& path);
Image decode(const std::vector<std::uint8_t>& bytes);

// Values are clamped to [0,1] and rounded to the nearest 8-bit level.
void write(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode(const Image& image);

// Round-trip through 8 bits without touching disk.
Image quantize(const Image& image);

}  // namespace shmt::png
