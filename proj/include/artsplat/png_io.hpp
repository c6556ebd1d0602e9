#pragma once

#include <string>

#include "artsplat/image.hpp"

namespace artsplat {

// 8-bit PNG I/O. RGB images are quantized with round-to-nearest on
// [0,1]; label images are written as single-channel gray.
void write_png_rgb(const std::string& path, const Image3& img);
void write_png_gray(const std::string& path, const LabelImage& img);
Image3 read_png_rgb(const std::string& path);
LabelImage read_png_gray(const std::string& path);

}  // namespace artsplat
