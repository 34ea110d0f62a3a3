#include "mvit/pgm.hpp"

#include <fstream>
#include <string>

#include "mvit/errors.hpp"

namespace mvit {

namespace {

void skip_space_and_comments(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

std::size_t read_header_value(std::istream& in, const std::filesystem::path& path) {
    skip_space_and_comments(in);
    std::size_t v = 0;
    if (!(in >> v)) throw FormatError("malformed PNM header in " + path.string());
    return v;
}

struct PnmHeader {
    std::string magic;
    std::size_t width = 0;
    std::size_t height = 0;
};

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
    PnmHeader h;
    char m[2] = {0, 0};
    in.read(m, 2);
    if (!in) throw FormatError("empty image file " + path.string());
    h.magic.assign(m, 2);
    h.width = read_header_value(in, path);
    h.height = read_header_value(in, path);
    const std::size_t maxval = read_header_value(in, path);
    if (maxval != 255) throw FormatError("only maxval 255 is supported in " + path.string());
    if (h.width == 0 || h.height == 0) throw FormatError("zero-sized image in " + path.string());
    in.get();  // single whitespace before the raster
    return h;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    if (image.pixels.size() != image.width * image.height) throw FormatError("pixel count does not match PGM size");
    auto out = open_out(path);
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const PnmHeader h = read_header(in, path);
    if (h.magic != "P5") throw FormatError(path.string() + " is not a binary PGM");
    GrayImage img{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height)};
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw FormatError("truncated raster in " + path.string());
    return img;
}

RgbImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const PnmHeader h = read_header(in, path);
    RgbImage img{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height * 3)};
    if (h.magic == "P6") {
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    } else if (h.magic == "P5") {
        std::vector<std::uint8_t> gray(h.width * h.height);
        in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
        for (std::size_t i = 0; i < gray.size(); ++i) img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = gray[i];
    } else {
        throw FormatError(path.string() + " is neither P5 nor P6");
    }
    if (!in) throw FormatError("truncated raster in " + path.string());
    return img;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != image.width * image.height * 3) throw FormatError("pixel count does not match PPM size");
    auto out = open_out(path);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

GrayImage upscale(const GrayImage& image, std::size_t factor) {
    if (factor <= 1) return image;
    GrayImage out{image.width * factor, image.height * factor, {}};
    out.pixels.resize(out.width * out.height);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) out.pixels[y * out.width + x] = image.at(y / factor, x / factor);
    return out;
}

}  // namespace mvit
