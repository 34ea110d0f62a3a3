#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "mvit/errors.hpp"
#include "mvit/gradcheck.hpp"
#include "mvit/patch_merging.hpp"
#include "mvit/pgm.hpp"
#include "test_util.hpp"

using namespace mvit;
using namespace mvit::testing;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mvit_merge_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// 7x7 + 4x4 + 1x1 layout.
std::vector<TokenOrigin> full_layout() { return grid_provenance({{7, 7}, {4, 4}, {1, 1}}); }

}  // namespace

TEST(AdaptiveMerge, WeightsFormProbabilityVectors) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        ParameterStore store(seed);
        AdaptivePatchMerging apm(store, "merge", 8, 9);
        randomize_parameters(store, seed, 2.0);
        MergeResult r = apm(random_tensor({3, 9, 8}, seed, -4, 4, false));
        ASSERT_EQ(r.per_image.size(), 3u);
        for (const auto& mw : r.per_image) {
            ASSERT_EQ(mw.weights.size(), 9u);
            for (double w : mw.weights) EXPECT_GE(w, 0.0);
            EXPECT_NEAR(std::accumulate(mw.weights.begin(), mw.weights.end(), 0.0), 1.0, 1e-9);
        }
    }
}

TEST(AdaptiveMerge, UniformGatesReproduceAveragePooling) {
    ParameterStore store(4);
    AdaptivePatchMerging apm(store, "merge", 8, 5);
    fill(apm.fc2().weight, 0.0);
    fill(apm.fc2().bias, 0.0);
    Tensor x = random_tensor({2, 5, 8}, 5, -1, 1, false);
    MergeResult r = apm(x);
    for (const auto& mw : r.per_image)
        for (double w : mw.weights) EXPECT_DOUBLE_EQ(w, 0.2);
    EXPECT_LT(max_abs_diff(r.feature, avg_pool_merge(x)), 1e-12);
}

TEST(AdaptiveMerge, OneHotWeightsSelectToken) {
    ParameterStore store(4);
    AdaptivePatchMerging apm(store, "merge", 6, 4);
    auto g = apm.global_logits();
    fill(g, -1000.0);
    g.mutable_values()[2] = 1000.0;
    Tensor x = random_tensor({2, 4, 6}, 6, -1, 1, false);
    MergeResult r = apm(x);
    EXPECT_TRUE(bitwise_equal(r.feature, ops::reshape(ops::narrow(x, 1, 2, 1), {2, 6})));
}

TEST(AdaptiveMerge, JointPermutationLeavesFeatureUnchanged) {
    ParameterStore store(7);
    AdaptivePatchMerging apm(store, "merge", 8, 6);
    randomize_parameters(store, 7, 1.5);
    Tensor x = random_tensor({2, 6, 8}, 8, -1, 1, false);
    const MergeResult base = apm(x);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto perm = random_permutation(6, s);
        Tensor g = apm.global_logits().clone();
        Tensor permuted_logits = Tensor::from({6}, [&] {
            std::vector<double> v(6);
            for (std::size_t i = 0; i < 6; ++i) v[i] = g.values()[perm[i]];
            return v;
        }());
        MergeResult r = apm_forward(permute_tokens(x, perm), apm.fc1(), apm.fc2(), permuted_logits);
        EXPECT_LT(max_abs_diff(r.feature, base.feature), 1e-9);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.per_image[0].weights[i], base.per_image[0].weights[perm[i]], 1e-15);
    }
}

TEST(AdaptiveMerge, WeightsInvariantToCommonPositiveScaleOfRaw) {
    // Adding log(k) to every global logit scales each sigmoid differently, so test the literal
    // statement through normalize_last directly.
    Tensor raw = random_tensor({2, 7}, 3, 0.1, 1.0, false);
    Tensor a = ops::normalize_last(raw), b = ops::normalize_last(ops::scale(raw, 37.5));
    EXPECT_LT(max_abs_diff(a, b), 1e-15);
}

TEST(AdaptiveMerge, EvaluationIsBitwiseRepeatable) {
    ParameterStore store(9);
    AdaptivePatchMerging apm(store, "merge", 8, 5);
    Tensor x = random_tensor({2, 5, 8}, 10, -1, 1, false);
    const MergeResult a = apm(x), b = apm(x);
    EXPECT_EQ(a.per_image, b.per_image);
    EXPECT_EQ(a.per_image[0].global_logits, a.per_image[1].global_logits);
}

TEST(AdaptiveMerge, DegenerateSumIsNumericalError) {
    ParameterStore store(9);
    AdaptivePatchMerging apm(store, "merge", 4, 3);
    fill(apm.global_logits(), -1000.0);
    EXPECT_THROW(apm(random_tensor({1, 3, 4}, 1, -1, 1, false)), NumericalError);
}

TEST(AdaptiveMerge, GradcheckThroughMlpAndGlobalLogits) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        ParameterStore store(seed);
        AdaptivePatchMerging apm(store, "merge", 8, 5);
        randomize_parameters(store, seed, 1.0);
        Tensor x = random_tensor({2, 5, 8}, seed + 3);
        std::vector<Tensor> inputs{x};
        for (const auto& p : store.parameters()) inputs.push_back(p.tensor);
        const auto report = gradcheck([&] { return weighted_sum(apm(x).feature); }, inputs);
        EXPECT_LT(report.max_relative_error, 1e-4) << "seed " << seed;
    }
}

TEST(AveragePool, IdenticalTokensGiveThatToken) {
    Tensor tok = random_tensor({1, 1, 5}, 1, -1, 1, false);
    Tensor x = ops::concat({tok, tok, tok}, 1);
    EXPECT_LT(max_abs_diff(avg_pool_merge(x), ops::reshape(tok, {1, 5})), 1e-15);
}

TEST(AveragePool, OppositeTokensCancel) {
    Tensor t = random_tensor({1, 1, 5}, 2, -1, 1, false);
    Tensor y = avg_pool_merge(ops::concat({t, ops::scale(t, -1.0)}, 1));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ClassReadout, ReturnsTokenZero) {
    Tensor x = random_tensor({2, 67, 6}, 3, -1, 1, false);
    Tensor y = class_token_readout(x, true);
    EXPECT_EQ(y.shape(), (Shape{2, 6}));
    EXPECT_TRUE(bitwise_equal(y, ops::reshape(ops::narrow(x, 1, 0, 1), {2, 6})));
}

TEST(ClassReadout, IgnoresRemainingTokens) {
    Tensor x = random_tensor({1, 4, 3}, 3, -1, 1, false);
    Tensor z = x.clone();
    for (std::size_t i = 3; i < 12; ++i) z.mutable_values()[i] = 42.0;
    EXPECT_TRUE(bitwise_equal(class_token_readout(x, true), class_token_readout(z, true)));
}

TEST(ClassReadout, WithoutClassTokenIsConfigError) {
    EXPECT_THROW(class_token_readout(random_tensor({1, 4, 3}, 3, -1, 1, false), false), ConfigError);
}

TEST(WeightGrid, UniformWeightsGiveMidGray) {
    MergeWeights mw;
    mw.weights.assign(66, 1.0 / 66);
    const auto grids = weight_grids(mw, full_layout());
    ASSERT_EQ(grids.size(), 3u);
    EXPECT_EQ(grids[0].width, 7u);
    EXPECT_EQ(grids[1].width, 4u);
    EXPECT_EQ(grids[2].width, 1u);
    for (const auto& g : grids)
        for (auto p : g.pixels) EXPECT_EQ(p, 128);
}

TEST(WeightGrid, OneHotGivesSingleWhitePixel) {
    MergeWeights mw;
    mw.weights.assign(66, 0.0);
    mw.weights[2 * 7 + 3] = 1.0;
    const auto grids = weight_grids(mw, full_layout());
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(grids[0].at(r, c), (r == 2 && c == 3) ? 255 : 0);
}

TEST(WeightGrid, UpscaleByThirtyTwo) {
    MergeWeights mw;
    mw.weights.assign(66, 0.0);
    mw.weights[0] = 1.0;
    const auto grids = weight_grids(mw, full_layout(), 32);
    EXPECT_EQ(grids[0].width, 224u);
    EXPECT_EQ(grids[1].height, 128u);
    EXPECT_EQ(grids[2].width, 32u);
    EXPECT_EQ(grids[0].at(31, 31), 255);
    EXPECT_EQ(grids[0].at(32, 31), 0);
}

TEST(WeightGrid, ProvenanceMismatchIsDimensionError) {
    MergeWeights mw;
    mw.weights.assign(5, 0.2);
    EXPECT_THROW(weight_grids(mw, full_layout()), DimensionError);
}

TEST(WeightGrid, ExportWritesReadableP5Files) {
    const auto dir = scratch_dir("export");
    MergeWeights mw;
    mw.weights.assign(66, 0.0);
    mw.weights[2 * 7 + 3] = 1.0;
    const auto paths = export_weight_grids(dir, "img7", mw, full_layout());
    ASSERT_EQ(paths.size(), 3u);
    EXPECT_EQ(paths[1].filename(), "img7.branch1.pgm");
    const GrayImage g = read_pgm(paths[0]);
    EXPECT_EQ(g, weight_grids(mw, full_layout())[0]);
    std::ifstream in(paths[0], std::ios::binary);
    std::string magic;
    in >> magic;
    EXPECT_EQ(magic, "P5");
}

TEST(Pnm, GrayRoundTripAndRgbFromGray) {
    const auto dir = scratch_dir("pnm");
    GrayImage g{3, 2, {0, 10, 20, 30, 40, 255}};
    write_pgm(dir / "a.pgm", g);
    EXPECT_EQ(read_pgm(dir / "a.pgm"), g);
    RgbImage rgb = read_pnm(dir / "a.pgm");
    EXPECT_EQ(rgb.pixels[3 * 5], 255);
    EXPECT_EQ(rgb.pixels[3 * 5 + 2], 255);
    write_ppm(dir / "b.ppm", rgb);
    EXPECT_EQ(read_pnm(dir / "b.ppm").pixels, rgb.pixels);
}

TEST(Pnm, MalformedInputsAreFormatErrors) {
    const auto dir = scratch_dir("bad");
    {
        std::ofstream out(dir / "t.pgm", std::ios::binary);
        out << "P5\n4 4\n255\n" << "abc";
    }
    EXPECT_THROW(read_pgm(dir / "t.pgm"), FormatError);
    {
        std::ofstream out(dir / "m.pgm", std::ios::binary);
        out << "P2\n1 1\n255\n0";
    }
    EXPECT_THROW(read_pnm(dir / "m.pgm"), FormatError);
    EXPECT_THROW(read_pgm(dir / "missing.pgm"), IoError);
}
