#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "mvit/data.hpp"
#include "mvit/errors.hpp"

using namespace mvit;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mvit_data_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// n records whose label is r % 10 and whose pixel i is (r + i) mod 256.
std::vector<std::uint8_t> fake_batch(std::size_t n, std::size_t offset = 0) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t r = 0; r < n; ++r) {
        bytes.push_back(static_cast<std::uint8_t>((r + offset) % 10));
        for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>((r + offset + i) % 256));
    }
    return bytes;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string format_error_message(const std::filesystem::path& p) {
    try {
        read_cifar_batch(p);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

std::vector<double> to_doubles(const LabeledImage& img) { return {img.pixels.begin(), img.pixels.end()}; }

std::vector<double> ramp_image(std::size_t s) {
    std::vector<double> v(3 * s * s);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 97) / 96.0;
    return v;
}

// Plain batch gradient descent on the logistic loss over flattened pixels.
double logistic_train_accuracy(const Dataset& d) {
    const std::size_t D = d.images[0].pixels.size();
    std::vector<double> w(D, 0.0);
    double bias = 0.0;
    auto score = [&](const LabeledImage& img) {
        double z = bias;
        for (std::size_t j = 0; j < D; ++j) z += w[j] * (img.pixels[j] - 0.5);
        return z;
    };
    for (int it = 0; it < 50; ++it) {
        std::vector<double> gw(D, 0.0);
        double gb = 0.0;
        for (const auto& img : d.images) {
            const double p = 1.0 / (1.0 + std::exp(-score(img)));
            const double r = p - static_cast<double>(img.label);
            for (std::size_t j = 0; j < D; ++j) gw[j] += r * (img.pixels[j] - 0.5);
            gb += r;
        }
        for (std::size_t j = 0; j < D; ++j) w[j] -= 0.1 * gw[j] / static_cast<double>(d.size());
        bias -= 0.1 * gb / static_cast<double>(d.size());
    }
    std::size_t correct = 0;
    for (const auto& img : d.images) correct += (score(img) > 0.0) == (img.label == 1);
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace

TEST(Cifar, FirstLabelByteIsFirstLabel) {
    const auto dir = scratch_dir("first");
    auto bytes = fake_batch(4);
    bytes[0] = 7;
    write_bytes(dir / "b.bin", bytes);
    const auto images = read_cifar_batch(dir / "b.bin");
    ASSERT_EQ(images.size(), 4u);
    EXPECT_EQ(images[0].label, 7u);
    EXPECT_EQ(images[1].label, 1u);
    EXPECT_FLOAT_EQ(images[1].pixels[5], 6.0f / 255.0f);
    EXPECT_EQ(images[0].size, 32u);
}

TEST(Cifar, ReserializationReproducesBytes) {
    const auto dir = scratch_dir("roundtrip");
    const auto bytes = fake_batch(6, 3);
    write_bytes(dir / "b.bin", bytes);
    EXPECT_EQ(serialize_cifar(read_cifar_batch(dir / "b.bin")), bytes);
}

TEST(Cifar, SizeMismatchNamesByteOffset) {
    const auto dir = scratch_dir("size");
    auto bytes = fake_batch(2);
    bytes.resize(bytes.size() + 10);
    write_bytes(dir / "b.bin", bytes);
    const std::string msg = format_error_message(dir / "b.bin");
    EXPECT_NE(msg.find("byte offset 6146"), std::string::npos) << msg;
}

TEST(Cifar, LabelAboveNineNamesByteOffset) {
    const auto dir = scratch_dir("label");
    auto bytes = fake_batch(3);
    bytes[2 * 3073] = 10;
    write_bytes(dir / "b.bin", bytes);
    const std::string msg = format_error_message(dir / "b.bin");
    EXPECT_NE(msg.find("byte offset 6146"), std::string::npos) << msg;
}

TEST(Cifar, SplitsReadTheirFiles) {
    const auto dir = scratch_dir("splits");
    for (int i = 1; i <= 5; ++i) write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), fake_batch(3, i));
    write_bytes(dir / "test_batch.bin", fake_batch(2));
    EXPECT_EQ(load_cifar10(dir, CifarSplit::train).size(), 15u);
    EXPECT_EQ(load_cifar10(dir, CifarSplit::test).size(), 2u);
    const Dataset limited = load_cifar10(dir, CifarSplit::train, 7);
    EXPECT_EQ(limited.size(), 7u);
    EXPECT_EQ(limited.images[3].label, 2u);  // first record of batch 2
    EXPECT_THROW(load_cifar10(dir / "missing", CifarSplit::test), IoError);
}

TEST(Cifar, RealSplitSizes) {
    const char* env = std::getenv("CIFAR10_DIR");
    if (env == nullptr) GTEST_SKIP() << "CIFAR10_DIR not set";
    EXPECT_EQ(load_cifar10(env, CifarSplit::train).size(), 50000u);
    EXPECT_EQ(load_cifar10(env, CifarSplit::test).size(), 10000u);
}

TEST(Synthetic, FixedSeedIsBitwiseRepeatable) {
    for (auto kind : {SyntheticKind::two_gaussians, SyntheticKind::grid_patterns, SyntheticKind::centered}) {
        const std::size_t K = kind == SyntheticKind::two_gaussians ? 2 : 4;
        const Dataset a = synthetic_set(kind, 12, 16, K, 5), b = synthetic_set(kind, 12, 16, K, 5);
        EXPECT_EQ(a.images, b.images) << to_string(kind);
        EXPECT_NE(a.images, synthetic_set(kind, 12, 16, K, 6).images) << to_string(kind);
    }
}

TEST(Synthetic, ZeroSigmaGivesTwoDistinctImages) {
    SyntheticOptions opt;
    opt.sigma = 0.0;
    const Dataset d = synthetic_set(SyntheticKind::two_gaussians, 20, 8, 2, 1, opt);
    std::set<std::vector<float>> distinct;
    for (const auto& img : d.images) distinct.insert(img.pixels);
    EXPECT_EQ(distinct.size(), 2u);
}

TEST(Synthetic, ClassMeansSeparatedBySixSigma) {
    const SyntheticOptions opt;
    EXPECT_GE(2.0 * opt.mu, 6.0 * opt.sigma);
}

TEST(Synthetic, LogisticRegressionSeparatesTwoGaussians) {
    const Dataset d = synthetic_set(SyntheticKind::two_gaussians, 200, 8, 2, 3);
    EXPECT_EQ(logistic_train_accuracy(d), 1.0);
}

TEST(Synthetic, GridLabelIsBrightestQuadrant) {
    const Dataset d = synthetic_set(SyntheticKind::grid_patterns, 40, 16, 4, 2);
    for (const auto& img : d.images) {
        double q[4] = {0, 0, 0, 0};
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t y = 0; y < 16; ++y)
                for (std::size_t x = 0; x < 16; ++x) q[(y < 8 ? 0 : 2) + (x < 8 ? 0 : 1)] += img.pixels[(ch * 16 + y) * 16 + x];
        EXPECT_EQ(static_cast<std::size_t>(std::max_element(q, q + 4) - q), img.label);
    }
}

TEST(Synthetic, PixelsInUnitRangeAndLabelsBalanced) {
    const Dataset d = synthetic_set(SyntheticKind::centered, 30, 16, 3, 4);
    std::vector<std::size_t> counts(3, 0);
    for (const auto& img : d.images) {
        ++counts[img.label];
        for (float p : img.pixels) {
            EXPECT_GE(p, 0.0f);
            EXPECT_LE(p, 1.0f);
        }
    }
    EXPECT_EQ(counts, (std::vector<std::size_t>{10, 10, 10}));
}

TEST(Synthetic, CenteredCornersCarryLessClassSignal) {
    // Two images of one class agree near the center and disagree in the corners.
    const Dataset d = synthetic_set(SyntheticKind::centered, 4, 32, 2, 9);
    const auto& a = d.images[0].pixels;
    const auto& b = d.images[2].pixels;
    EXPECT_LT(std::abs(a[16 * 32 + 16] - b[16 * 32 + 16]), 0.1);
    double corner = 0.0;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) corner += std::abs(a[y * 32 + x] - b[y * 32 + x]);
    EXPECT_GT(corner / 16.0, 0.1);
}

TEST(Synthetic, InvalidArgumentsAreConfigErrors) {
    EXPECT_THROW(synthetic_set(SyntheticKind::two_gaussians, 1, 8, 2, 0), ConfigError);
    EXPECT_THROW(synthetic_set(SyntheticKind::two_gaussians, 10, 8, 3, 0), ConfigError);
    EXPECT_THROW(synthetic_set(SyntheticKind::grid_patterns, 10, 8, 5, 0), ConfigError);
    EXPECT_THROW(synthetic_kind_from_string("moons"), ConfigError);
}

TEST(Preprocess, SameSizeResizeIsIdentity) {
    const auto v = ramp_image(32);
    EXPECT_EQ(resize_nearest(v, 32, 32), v);
}

TEST(Preprocess, DoubleSizeMapsPixelsToTwoByTwoBlocks) {
    const auto v = ramp_image(32);
    const auto up = resize_nearest(v, 32, 64);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x)
                ASSERT_EQ(up[(ch * 64 + y) * 64 + x], v[(ch * 32 + y / 2) * 32 + x / 2]);
}

TEST(Preprocess, FlipTwiceIsIdentity) {
    const auto v = ramp_image(16);
    EXPECT_NE(flip_horizontal(v, 16), v);
    EXPECT_EQ(flip_horizontal(flip_horizontal(v, 16), 16), v);
}

TEST(Preprocess, CenteredCropIsIdentityAndShiftPadsZeros) {
    const auto v = ramp_image(8);
    EXPECT_EQ(pad_crop(v, 8, 4, 4, 4), v);
    const auto shifted = pad_crop(v, 8, 4, 0, 4);  // content moves down by 4 rows
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(shifted[x], 0.0);
    EXPECT_EQ(shifted[4 * 8 + 3], v[3]);
}

TEST(Preprocess, NormalizationRoundTrip) {
    Normalization n;
    n.mean[1] = 0.45;
    n.std[2] = 0.27;
    const auto v = ramp_image(16);
    auto w = v;
    normalize(w, 16, n);
    for (double x : w) EXPECT_TRUE(std::isfinite(x));
    denormalize(w, 16, n);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(w[i], v[i], 1e-12);
}

TEST(Preprocess, EvaluationIsDeterministicAndLeavesRngAlone) {
    const Dataset d = synthetic_set(SyntheticKind::centered, 2, 32, 2, 1);
    Rng rng = make_rng(1, "t");
    const Rng before = rng;
    const auto a = preprocess(d.images[0], 64, false, &rng);
    const auto b = preprocess(d.images[0], 64, false, nullptr);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(rng == before);
    auto expected = resize_nearest(to_doubles(d.images[0]), 32, 64);
    normalize(expected, 64, Normalization{});
    EXPECT_EQ(a, expected);
}

TEST(Preprocess, TrainModeDependsOnlyOnRngState) {
    const Dataset d = synthetic_set(SyntheticKind::centered, 2, 32, 2, 1);
    Rng r1 = make_rng(4, "aug"), r2 = make_rng(4, "aug");
    EXPECT_EQ(preprocess(d.images[1], 32, true, &r1), preprocess(d.images[1], 32, true, &r2));
    EXPECT_THROW(preprocess(d.images[1], 32, true, nullptr), ConfigError);
    EXPECT_THROW(preprocess(d.images[1], 4, false, nullptr), ConfigError);
}
