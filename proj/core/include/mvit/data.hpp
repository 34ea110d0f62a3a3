#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "mvit/rng.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

/// One RGB image, channel-planar, values in [0, 1] before normalization. Stored as float to
/// keep a full CIFAR-10 train split near 600 MB; batches are assembled in double.
struct LabeledImage {
    std::size_t size = 0;  // square side S
    std::vector<float> pixels;  // [3,S,S]
    std::uint32_t label = 0;

    Tensor to_tensor() const;
    bool operator==(const LabeledImage&) const = default;
};

struct Dataset {
    std::vector<LabeledImage> images;
    std::size_t num_classes = 0;

    std::size_t size() const { return images.size(); }
    /// First `count` images (all of them when count exceeds the size).
    Dataset head(std::size_t count) const;
};

enum class CifarSplit { train, test };

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

/// Reads data_batch_1..5.bin (train) or test_batch.bin (test) from `dir`. `limit` > 0 stops
/// after that many images.
Dataset load_cifar10(const std::filesystem::path& dir, CifarSplit split, std::size_t limit = 0);
/// Parses one batch file. Labels above 9 and sizes that are not a multiple of 3073 are
/// FormatErrors naming the byte offset.
std::vector<LabeledImage> read_cifar_batch(const std::filesystem::path& file, std::size_t limit = 0);
/// Inverse of read_cifar_batch: label byte then round(255 * pixel) per value.
std::vector<std::uint8_t> serialize_cifar(const std::vector<LabeledImage>& images);

enum class SyntheticKind { two_gaussians, grid_patterns, centered };

SyntheticKind synthetic_kind_from_string(std::string_view s);
std::string_view to_string(SyntheticKind kind);

struct SyntheticOptions {
    double sigma = 0.05;  // two_gaussians: per-pixel noise
    double mu = 0.2;      // two_gaussians: half the per-pixel distance between class means
};

/// Deterministic synthetic set; label of image i is i mod K.
///   two_gaussians: K = 2, mean 0.5 +/- mu * d with d = (+1, -1, +1) per channel, plus N(0, sigma).
///   grid_patterns: K <= 4, uniform noise in [0, 0.5] with +0.4 on quadrant `label`.
///   centered: a class color blended with uniform noise by a Gaussian envelope (std S/4) around
///     the image center, so the label signal fades toward the corners.
///   grid_patterns labels are not flip invariant; train on it with augmentation off.
Dataset synthetic_set(SyntheticKind kind, std::size_t n, std::size_t size, std::size_t num_classes,
                      std::uint64_t seed, const SyntheticOptions& options = {});

struct Normalization {
    double mean[3] = {0.5, 0.5, 0.5};
    double std[3] = {0.5, 0.5, 0.5};
};

/// [3,S,S] planar buffers.
std::vector<double> resize_nearest(const std::vector<double>& img, std::size_t from, std::size_t to);
std::vector<double> flip_horizontal(const std::vector<double>& img, std::size_t size);
/// Zero-pads by `pad` and takes the SxS window whose top-left corner is (top, left) in padded
/// coordinates.
std::vector<double> pad_crop(const std::vector<double>& img, std::size_t size, std::size_t pad, std::size_t top,
                             std::size_t left);
void normalize(std::vector<double>& img, std::size_t size, const Normalization& n);
void denormalize(std::vector<double>& img, std::size_t size, const Normalization& n);

/// Resize to target size; in train mode add a pad-4 random crop and a random horizontal flip;
/// then normalize. Evaluation mode never touches `rng`, which may be null.
std::vector<double> preprocess(const LabeledImage& img, std::size_t target, bool train, Rng* rng,
                               const Normalization& n = {});

}  // namespace mvit
