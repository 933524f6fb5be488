#include "umc/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace umc {

Tensor image_to_tensor(const Image& image) {
    Tensor t(Shape{image.height, image.width, image.channels});
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        t[i] = static_cast<float>(image.pixels[i]) / 255.0f;
    }
    return t;
}

Image tensor_to_image(const Tensor& values) {
    require(values.rank() == 3, ErrorKind::Shape, "tensor_to_image expects [H,W,C], got " + shape_str(values.shape()));
    Image image(values.dim(0), values.dim(1), values.dim(2));
    for (std::size_t i = 0; i < values.numel(); ++i) {
        const float v = std::clamp(values[i], 0.0f, 1.0f);
        image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return image;
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
    require(image.channels == 1 || image.channels == 3, ErrorKind::Shape, "PNM images have 1 or 3 channels");
    const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) + " " +
                               std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
    return bytes;
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    std::size_t pos = 0;
    auto bad = [&](const std::string& why) { fail(ErrorKind::Data, origin + ": malformed PNM (" + why + ")"); };
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos]) != 0) {
            ++pos;
        }
        std::string out;
        while (pos < bytes.size() && std::isspace(bytes[pos]) == 0) {
            out.push_back(static_cast<char>(bytes[pos++]));
        }
        if (out.empty()) {
            bad("truncated header");
        }
        return out;
    };
    auto number = [&]() {
        const std::string s = token();
        if (!std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }) || s.size() > 6) {
            bad("bad number '" + s + "'");
        }
        return std::stoi(s);
    };
    const std::string magic = token();
    if (magic != "P6" && magic != "P5") {
        bad("magic '" + magic + "'");
    }
    const int width = number();
    const int height = number();
    const int maxval = number();
    if (maxval != 255 || width <= 0 || height <= 0) {
        bad("unsupported size or maxval");
    }
    if (pos >= bytes.size() || std::isspace(bytes[pos]) == 0) {
        bad("missing separator after header");
    }
    ++pos;
    Image image(height, width, magic == "P6" ? 3 : 1);
    if (bytes.size() - pos != image.pixels.size()) {
        bad("expected " + std::to_string(image.pixels.size()) + " pixel bytes, found " + std::to_string(bytes.size() - pos));
    }
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), image.pixels.begin());
    return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    require(image.channels == 3, ErrorKind::Shape, "PPM needs 3 channels");
    atomic_write(path, encode_pnm(image));
}

void write_pgm(const std::filesystem::path& path, const Image& gray) {
    require(gray.channels == 1, ErrorKind::Shape, "PGM needs 1 channel");
    atomic_write(path, encode_pnm(gray));
}

Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path), path.string()); }

void atomic_write(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::Data, "cannot open '" + tmp.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            fail(ErrorKind::Data, "write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        fail(ErrorKind::Data, "cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
    }
}

void atomic_write(const std::filesystem::path& path, const std::string& text) {
    atomic_write(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Data, "cannot open '" + path.string() + "'");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace umc
