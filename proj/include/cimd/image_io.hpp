#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cimd {

// Single-channel grayscale PNG.
struct GrayImage {
    int width = 0;
    int height = 0;
    int bit_depth = 8;              // 8 or 16
    std::vector<std::uint16_t> px;  // row-major
};

void write_png(const std::string& path, const GrayImage& img);
// Throws std::runtime_error naming the file on any decode failure or if the file is not
// single-channel grayscale.
GrayImage read_png(const std::string& path);

// 8-bit RGB, used by the plot renderer.
void write_png_rgb(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb);

}  // namespace cimd
