#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umc/tensor.hpp"

namespace umc {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

/// 8-bit interleaved image, row-major H x W x C.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int h, int w, int c = 3) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0) {}

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    Rgb rgb(int y, int x) const { return {at(y, x, 0), at(y, x, 1), at(y, x, 2)}; }
    void set(int y, int x, Rgb c) {
        at(y, x, 0) = c.r;
        at(y, x, 1) = c.g;
        at(y, x, 2) = c.b;
    }

    bool operator==(const Image&) const = default;
};

/// Values in [0,1] as an H x W x C tensor.
Tensor image_to_tensor(const Image& image);
/// Clamps to [0,1] and rounds to the nearest 8-bit level.
Image tensor_to_image(const Tensor& values);

/// Binary P6/P5 with single-whitespace header "P6\n<w> <h>\n255\n", no comments.
std::vector<std::uint8_t> encode_pnm(const Image& image);
Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_ppm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, const Image& gray);
Image read_pnm(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace umc
