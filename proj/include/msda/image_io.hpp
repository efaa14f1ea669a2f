#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace msda::img {

// Grayscale image; pixel values span [0, (1<<bitdepth)-1].
struct GrayImage {
    int width = 0;
    int height = 0;
    int bitdepth = 8; // 8 or 16
    std::vector<std::uint16_t> pixels;

    float max_value() const { return bitdepth == 16 ? 65535.0f : 255.0f; }
};

// Reads a grayscale PNG (color type 0, bit depth 8/16, non-interlaced) or
// a binary PGM (P5). Throws on anything else, naming the file.
GrayImage read_gray(const std::filesystem::path& file);

void write_png_gray8(const std::filesystem::path& file, int width, int height,
                     const std::vector<std::uint8_t>& pixels);
void write_png_gray16(const std::filesystem::path& file, int width, int height,
                      const std::vector<std::uint16_t>& pixels);

} // namespace msda::img
