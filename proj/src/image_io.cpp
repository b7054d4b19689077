#include "cimd/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace cimd {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

void write_rows(const std::string& path, int width, int height, int bit_depth, int color_type,
                const std::vector<std::vector<png_byte>>& rows) {
    FilePtr f = open_or_throw(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed writing " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // Fixed metadata so identical pixels give identical files.
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const GrayImage& img) {
    if (img.bit_depth != 8 && img.bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
    if (img.px.size() != static_cast<std::size_t>(img.width) * img.height) {
        throw std::invalid_argument("write_png: pixel count mismatch for " + path);
    }
    const int bytes = img.bit_depth / 8;
    std::vector<std::vector<png_byte>> rows(img.height, std::vector<png_byte>(static_cast<std::size_t>(img.width) * bytes));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint16_t v = img.px[static_cast<std::size_t>(y) * img.width + x];
            if (bytes == 1) {
                if (v > 255) throw std::invalid_argument("write_png: 8-bit value out of range");
                rows[y][x] = static_cast<png_byte>(v);
            } else {
                rows[y][2 * x] = static_cast<png_byte>(v >> 8);  // PNG stores 16-bit samples big-endian
                rows[y][2 * x + 1] = static_cast<png_byte>(v & 0xff);
            }
        }
    }
    write_rows(path, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("write_png_rgb: size");
    std::vector<std::vector<png_byte>> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y].assign(rgb.begin() + static_cast<std::ptrdiff_t>(y) * width * 3,
                       rgb.begin() + static_cast<std::ptrdiff_t>(y + 1) * width * 3);
    }
    write_rows(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

GrayImage read_png(const std::string& path) {
    FilePtr f = open_or_throw(path, "rb");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw std::runtime_error("not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("corrupt PNG: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    GrayImage img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("expected 8- or 16-bit grayscale PNG: " + path);
    }
    img.bit_depth = depth;
    const int bytes = depth / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * bytes);
    img.px.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < img.width; ++x) {
            img.px[static_cast<std::size_t>(y) * img.width + x] =
                bytes == 1 ? row[x] : static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace cimd
