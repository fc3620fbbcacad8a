#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "crisp/image.hpp"

namespace crisp {

enum class PngDepth { Eight = 8, Sixteen = 16 };

// Reads 8- or 16-bit PNGs. Colour inputs are converted to luminance; values
// are divided by the maximum code value of the stored bit depth.
Image read_png(const std::filesystem::path& path);
Image decode_png(const std::string& bytes);

// Writes a single-channel PNG with no time or text chunks, so equal images
// produce equal files.
void write_png(const std::filesystem::path& path, const Image& img, PngDepth depth = PngDepth::Sixteen);
std::string encode_png(const Image& img, PngDepth depth = PngDepth::Sixteen);

}  // namespace crisp
