#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mvit {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
    bool operator==(const GrayImage&) const = default;
};

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

/// Binary PPM (P6) or PGM (P5, replicated to three channels); maxval must be 255.
RgbImage read_pnm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

/// Nearest-neighbour integer upscale.
GrayImage upscale(const GrayImage& image, std::size_t factor);

}  // namespace mvit
