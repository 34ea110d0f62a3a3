#include "mvit/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "mvit/errors.hpp"

namespace mvit {

Tensor LabeledImage::to_tensor() const {
    return Tensor::from({3, size, size}, std::vector<double>(pixels.begin(), pixels.end()));
}

Dataset Dataset::head(std::size_t count) const {
    Dataset d;
    d.num_classes = num_classes;
    d.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(std::min(count, images.size())));
    return d;
}

std::vector<LabeledImage> read_cifar_batch(const std::filesystem::path& file, std::size_t limit) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open CIFAR batch " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0) {
        const std::size_t whole = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
        throw FormatError(file.string() + ": size " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073; partial record at byte offset " + std::to_string(whole));
    }
    std::size_t n = bytes.size() / kCifarRecordBytes;
    if (limit > 0) n = std::min(n, limit);
    std::vector<LabeledImage> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = r * kCifarRecordBytes;
        const auto label = static_cast<unsigned char>(bytes[off]);
        if (label > 9) {
            throw FormatError(file.string() + ": label " + std::to_string(label) + " at byte offset " +
                              std::to_string(off));
        }
        LabeledImage& img = out[r];
        img.size = kCifarSide;
        img.label = label;
        img.pixels.resize(kCifarRecordBytes - 1);
        for (std::size_t i = 0; i + 1 < kCifarRecordBytes; ++i) {
            img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[off + 1 + i])) / 255.0f;
        }
    }
    return out;
}

Dataset load_cifar10(const std::filesystem::path& dir, CifarSplit split, std::size_t limit) {
    std::vector<std::string> files;
    if (split == CifarSplit::train) {
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back("test_batch.bin");
    }
    Dataset d;
    d.num_classes = 10;
    for (const auto& f : files) {
        const std::size_t remaining = limit == 0 ? 0 : limit - d.images.size();
        auto part = read_cifar_batch(dir / f, remaining);
        d.images.insert(d.images.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        if (limit > 0 && d.images.size() >= limit) break;
    }
    return d;
}

std::vector<std::uint8_t> serialize_cifar(const std::vector<LabeledImage>& images) {
    std::vector<std::uint8_t> out;
    out.reserve(images.size() * kCifarRecordBytes);
    for (const auto& img : images) {
        if (img.size != kCifarSide || img.label > 9) throw ConfigError("serialize_cifar: not a CIFAR-10 image");
        out.push_back(static_cast<std::uint8_t>(img.label));
        for (float p : img.pixels) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)));
    }
    return out;
}

SyntheticKind synthetic_kind_from_string(std::string_view s) {
    if (s == "two_gaussians") return SyntheticKind::two_gaussians;
    if (s == "grid_patterns") return SyntheticKind::grid_patterns;
    if (s == "centered") return SyntheticKind::centered;
    throw ConfigError("unknown synthetic set '" + std::string(s) + "' (two_gaussians, grid_patterns, centered)");
}

std::string_view to_string(SyntheticKind kind) {
    switch (kind) {
        case SyntheticKind::two_gaussians: return "two_gaussians";
        case SyntheticKind::grid_patterns: return "grid_patterns";
        case SyntheticKind::centered: return "centered";
    }
    return "?";
}

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Dataset synthetic_set(SyntheticKind kind, std::size_t n, std::size_t size, std::size_t num_classes,
                      std::uint64_t seed, const SyntheticOptions& options) {
    if (num_classes == 0 || n < num_classes) throw ConfigError("synthetic_set: need n >= K >= 1");
    if (kind == SyntheticKind::two_gaussians && num_classes != 2) throw ConfigError("two_gaussians has K = 2");
    if (kind == SyntheticKind::grid_patterns && num_classes > 4) throw ConfigError("grid_patterns has K <= 4");
    const std::size_t S = size, plane = S * S, D = 3 * plane;

    // Class-level structure comes from streams independent of the per-image noise.
    std::vector<std::array<double, 3>> colors(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        Rng rng = make_rng(seed, "synthetic.color", {static_cast<std::uint64_t>(kind), k});
        for (double& v : colors[k]) v = uniform01(rng);
    }
    // Per-channel sign, constant over space, so crops and flips keep the class mean.
    std::vector<double> direction(D);
    for (std::size_t j = 0; j < D; ++j) direction[j] = (j / plane) % 2 == 0 ? 1.0 : -1.0;
    std::vector<double> envelope(plane);
    const double c = (static_cast<double>(S) - 1.0) / 2.0, width = static_cast<double>(S) / 4.0;
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
            envelope[y * S + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        }

    Dataset d;
    d.num_classes = num_classes;
    d.images.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        LabeledImage& img = d.images[i];
        img.size = S;
        img.label = static_cast<std::uint32_t>(i % num_classes);
        img.pixels.resize(D);
        Rng rng = make_rng(seed, "synthetic.image", {static_cast<std::uint64_t>(kind), i});
        switch (kind) {
            case SyntheticKind::two_gaussians: {
                const double sign = img.label == 0 ? -1.0 : 1.0;
                for (std::size_t j = 0; j < D; ++j) {
                    const double noise = options.sigma > 0.0 ? options.sigma * standard_normal(rng) : 0.0;
                    img.pixels[j] = clamp01(0.5 + sign * options.mu * direction[j] + noise);
                }
                break;
            }
            case SyntheticKind::grid_patterns: {
                const std::size_t half = S / 2;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t y = 0; y < S; ++y)
                        for (std::size_t x = 0; x < S; ++x) {
                            const std::size_t quadrant = (y < half ? 0 : 2) + (x < half ? 0 : 1);
                            double v = 0.5 * uniform01(rng);
                            if (quadrant == img.label) v += 0.4;
                            img.pixels[ch * plane + y * S + x] = clamp01(v);
                        }
                break;
            }
            case SyntheticKind::centered: {
                const auto& color = colors[img.label];
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const double e = envelope[p];
                        img.pixels[ch * plane + p] = clamp01(e * color[ch] + (1.0 - e) * uniform01(rng));
                    }
                break;
            }
        }
    }
    return d;
}

std::vector<double> resize_nearest(const std::vector<double>& img, std::size_t from, std::size_t to) {
    if (img.size() != 3 * from * from) throw DimensionError("resize_nearest: buffer is not [3,S,S]");
    if (from == to) return img;
    std::vector<double> out(3 * to * to);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < to; ++y) {
            const std::size_t sy = y * from / to;
            for (std::size_t x = 0; x < to; ++x) {
                out[(ch * to + y) * to + x] = img[(ch * from + sy) * from + x * from / to];
            }
        }
    return out;
}

std::vector<double> flip_horizontal(const std::vector<double>& img, std::size_t size) {
    std::vector<double> out(img.size());
    for (std::size_t row = 0; row < 3 * size; ++row)
        for (std::size_t x = 0; x < size; ++x) out[row * size + x] = img[row * size + size - 1 - x];
    return out;
}

std::vector<double> pad_crop(const std::vector<double>& img, std::size_t size, std::size_t pad, std::size_t top,
                             std::size_t left) {
    if (top > 2 * pad || left > 2 * pad) throw DimensionError("pad_crop: window outside padded image");
    std::vector<double> out(img.size(), 0.0);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < size; ++y) {
            const std::size_t py = y + top;  // padded coordinates
            if (py < pad || py >= pad + size) continue;
            for (std::size_t x = 0; x < size; ++x) {
                const std::size_t px = x + left;
                if (px < pad || px >= pad + size) continue;
                out[(ch * size + y) * size + x] = img[(ch * size + py - pad) * size + px - pad];
            }
        }
    return out;
}

void normalize(std::vector<double>& img, std::size_t size, const Normalization& n) {
    const std::size_t plane = size * size;
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < plane; ++i) img[ch * plane + i] = (img[ch * plane + i] - n.mean[ch]) / n.std[ch];
}

void denormalize(std::vector<double>& img, std::size_t size, const Normalization& n) {
    const std::size_t plane = size * size;
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < plane; ++i) img[ch * plane + i] = img[ch * plane + i] * n.std[ch] + n.mean[ch];
}

std::vector<double> preprocess(const LabeledImage& img, std::size_t target, bool train, Rng* rng,
                               const Normalization& n) {
    if (target < 8) throw ConfigError("preprocess: target size must be at least 8");
    std::vector<double> x = resize_nearest(std::vector<double>(img.pixels.begin(), img.pixels.end()), img.size, target);
    if (train) {
        if (rng == nullptr) throw ConfigError("preprocess: train mode needs an rng");
        constexpr std::size_t pad = 4;
        const auto top = static_cast<std::size_t>(uniform01(*rng) * (2 * pad + 1));
        const auto left = static_cast<std::size_t>(uniform01(*rng) * (2 * pad + 1));
        x = pad_crop(x, target, pad, top, left);
        if (uniform01(*rng) < 0.5) x = flip_horizontal(x, target);
    }
    normalize(x, target, n);
    return x;
}

}  // namespace mvit
