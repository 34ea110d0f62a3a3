#include "mvit/patch_embedding.hpp"

#include <algorithm>

#include "mvit/errors.hpp"

namespace mvit {

namespace {

void check_images(const Tensor& images, std::size_t input_size) {
    if (images.rank() != 4 || images.size(1) != 3 || images.size(2) != input_size || images.size(3) != input_size) {
        throw DimensionError("expected images [B,3," + std::to_string(input_size) + "," + std::to_string(input_size) +
                             "], got " + shape_string(images.shape()));
    }
}

// [B,C,H,W] -> [B,H*W,C]
Tensor to_tokens(const Tensor& map) {
    const std::size_t B = map.size(0), C = map.size(1), HW = map.size(2) * map.size(3);
    return ops::permute(ops::reshape(map, {B, C, HW}), {0, 2, 1});
}

}  // namespace

std::vector<TokenOrigin> grid_provenance(const std::vector<std::pair<std::size_t, std::size_t>>& grids) {
    std::vector<TokenOrigin> out;
    for (std::size_t b = 0; b < grids.size(); ++b)
        for (std::size_t r = 0; r < grids[b].first; ++r)
            for (std::size_t c = 0; c < grids[b].second; ++c) out.push_back({b, r, c});
    return out;
}

SqueezeExcite SqueezeExcite::create(ParameterStore& store, const std::string& name, std::size_t channels,
                                    std::size_t reduction) {
    const std::size_t squeezed = std::max<std::size_t>(1, channels / reduction);
    return {Linear::create(store, join_name(name, "reduce"), channels, squeezed),
            Linear::create(store, join_name(name, "expand"), squeezed, channels)};
}

Tensor SqueezeExcite::gate(const Tensor& x) const {
    return ops::sigmoid(expand(ops::relu(reduce(ops::global_avg_pool(x)))));
}

InvertedResidualSE InvertedResidualSE::create(ParameterStore& store, const std::string& name, std::size_t in,
                                              std::size_t out, std::size_t stride, std::size_t expansion,
                                              std::size_t se_reduction) {
    const std::size_t hidden = in * expansion;
    InvertedResidualSE block;
    block.expand = Conv2d::create(store, join_name(name, "expand"), in, hidden, 1, 1);
    block.depthwise = Conv2d::create(store, join_name(name, "depthwise"), hidden, hidden, depthwise_kernel(stride),
                                     stride, hidden);
    block.se = SqueezeExcite::create(store, join_name(name, "se"), hidden, se_reduction);
    block.project = Conv2d::create(store, join_name(name, "project"), hidden, out, 1, 1);
    block.skip = stride == 1 && in == out;
    return block;
}

Tensor InvertedResidualSE::hidden(const Tensor& x) const {
    Tensor h = ops::relu(expand(x));
    h = ops::relu(depthwise(h));
    return se(h);
}

Tensor InvertedResidualSE::operator()(const Tensor& x) const {
    Tensor y = project(hidden(x));
    return skip ? ops::add(x, y) : y;
}

ConvBranch::ConvBranch(ParameterStore& store, const std::string& name, const BranchSpec& spec, std::size_t channels)
    : spec_(spec) {
    const auto& ch = spec.stage_channels;
    const auto& st = spec.stage_strides;
    stem_ = Conv2d::create(store, join_name(name, "stem"), 3, ch[0], 3, st[0]);
    for (std::size_t i = 1; i < ch.size(); ++i) {
        stages_.push_back(InvertedResidualSE::create(store, join_name(name, "stage" + std::to_string(i)), ch[i - 1],
                                                     ch[i], st[i], spec.expansion, spec.se_reduction));
    }
    if (spec.final_pool == FinalPool::global_avg) {
        pool_proj_ = Linear::create(store, join_name(name, "pool_proj"), ch.back(), channels);
    }
}

Tensor ConvBranch::operator()(const Tensor& images) const {
    Tensor x = ops::relu(stem_(images));
    for (const auto& stage : stages_) x = stage(x);
    if (spec_.final_pool == FinalPool::global_avg) {
        Tensor pooled = pool_proj_(ops::global_avg_pool(x));
        return ops::reshape(pooled, {pooled.size(0), 1, pooled.size(1)});
    }
    if (x.size(2) != spec_.grid_h || x.size(3) != spec_.grid_w) {
        throw ConfigError("branch output grid mismatch: got " + shape_string(x.shape()));
    }
    return to_tokens(x);
}

NaivePatchEmbedding::NaivePatchEmbedding(ParameterStore& store, const std::string& name, std::size_t input_size,
                                         std::size_t patch, std::size_t channels)
    : input_size_(input_size), patch_(patch) {
    if (patch == 0 || input_size % patch != 0) {
        throw ConfigError("input " + std::to_string(input_size) + " not divisible by patch " + std::to_string(patch));
    }
    proj_ = Linear::create(store, join_name(name, "proj"), 3 * patch * patch, channels);
    const std::size_t g = input_size / patch;
    provenance_ = grid_provenance({{g, g}});
}

TokenSet NaivePatchEmbedding::operator()(const Tensor& images) const {
    check_images(images, input_size_);
    return {proj_(ops::patchify(images, patch_)), provenance_};
}

BranchPatchEmbedding::BranchPatchEmbedding(ParameterStore& store, const std::string& name,
                                           const std::vector<BranchSpec>& specs, std::size_t input_size,
                                           std::size_t channels)
    : input_size_(input_size) {
    std::vector<std::pair<std::size_t, std::size_t>> grids;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        branches_.emplace_back(store, join_name(name, "branch" + std::to_string(i)), specs[i], channels);
        grids.emplace_back(specs[i].grid_h, specs[i].grid_w);
    }
    provenance_ = grid_provenance(grids);
}

TokenSet BranchPatchEmbedding::operator()(const Tensor& images) const {
    check_images(images, input_size_);
    std::vector<Tensor> parts;
    parts.reserve(branches_.size());
    for (const auto& branch : branches_) parts.push_back(branch(images));
    Tensor tokens = parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
    return {tokens, provenance_};
}

std::unique_ptr<PatchEmbedding> make_patch_embedding(ParameterStore& store, const ModelConfig& cfg) {
    switch (cfg.embedding) {
        case EmbeddingKind::naive:
            return std::make_unique<NaivePatchEmbedding>(store, "embed", cfg.input_size, cfg.patch_size, cfg.channels);
        case EmbeddingKind::conv:
        case EmbeddingKind::irregular:
            return std::make_unique<BranchPatchEmbedding>(store, "embed", cfg.branches, cfg.input_size, cfg.channels);
    }
    throw ConfigError("unknown embedding kind");
}

Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t patch) {
    const std::size_t B = patches.size(0);
    const std::size_t gh = height / patch, gw = width / patch;
    if (patches.rank() != 3 || patches.size(1) != gh * gw || patches.size(2) != channels * patch * patch) {
        throw DimensionError("unpatchify: unexpected patch tensor " + shape_string(patches.shape()));
    }
    std::vector<double> out(B * channels * height * width);
    auto pv = patches.values();
    std::size_t i = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t py = 0; py < gh; ++py)
            for (std::size_t px = 0; px < gw; ++px)
                for (std::size_t c = 0; c < channels; ++c)
                    for (std::size_t dy = 0; dy < patch; ++dy)
                        for (std::size_t dx = 0; dx < patch; ++dx)
                            out[((b * channels + c) * height + py * patch + dy) * width + px * patch + dx] = pv[i++];
    return Tensor::from({B, channels, height, width}, std::move(out));
}

}  // namespace mvit
