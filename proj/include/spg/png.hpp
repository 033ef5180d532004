#pragma once

#include <string>
#include <vector>

namespace spg {

// Writes an 8-bit grayscale PNG (zlib stream with stored deflate blocks; no
// external dependencies). Pixel values are clamped from [0,1]; ink renders
// dark on white.
void write_png_gray(const std::string& path, const std::vector<float>& pixels,
                    int width, int height, bool invert = true);

} // namespace spg
