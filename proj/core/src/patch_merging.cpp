#include "mvit/patch_merging.hpp"

#include <algorithm>
#include <cmath>

#include "mvit/errors.hpp"

namespace mvit {

AdaptivePatchMerging::AdaptivePatchMerging(ParameterStore& store, const std::string& name, std::size_t channels,
                                           std::size_t tokens)
    : channels_(channels), tokens_(tokens) {
    const std::size_t hidden = std::max<std::size_t>(1, channels / 4);
    fc1_ = Linear::create(store, join_name(name, "fc1"), channels, hidden);
    fc2_ = Linear::create(store, join_name(name, "fc2"), hidden, 1);
    global_logits_ = store.zeros(join_name(name, "global_logits"), {tokens});
}

MergeResult AdaptivePatchMerging::operator()(const Tensor& tokens) const {
    if (tokens.rank() != 3 || tokens.size(1) != tokens_ || tokens.size(2) != channels_) {
        throw DimensionError("adaptive merge expects [B," + std::to_string(tokens_) + "," + std::to_string(channels_) +
                             "], got " + shape_string(tokens.shape()));
    }
    return apm_forward(tokens, fc1_, fc2_, global_logits_);
}

MergeResult apm_forward(const Tensor& tokens, const Linear& fc1, const Linear& fc2, const Tensor& global_logits) {
    if (tokens.rank() != 3) throw DimensionError("apm_forward expects [B,N,C], got " + shape_string(tokens.shape()));
    const std::size_t B = tokens.size(0), N = tokens.size(1), C = tokens.size(2);
    if (global_logits.rank() != 1 || global_logits.size(0) != N) {
        throw DimensionError("global logits " + shape_string(global_logits.shape()) + " do not match " +
                             std::to_string(N) + " tokens");
    }
    Tensor adaptive = ops::reshape(fc2(ops::relu(fc1(tokens))), {B, N});
    Tensor raw = ops::mul(ops::sigmoid(adaptive), ops::sigmoid(global_logits));
    Tensor weights = ops::normalize_last(raw);
    Tensor feature = ops::reshape(ops::bmm(ops::reshape(weights, {B, 1, N}), tokens), {B, C});

    MergeResult out{feature, weights, {}};
    auto wv = weights.values();
    auto av = adaptive.values();
    auto gv = global_logits.values();
    for (std::size_t b = 0; b < B; ++b) {
        out.per_image.push_back({{wv.begin() + b * N, wv.begin() + (b + 1) * N},
                                 {av.begin() + b * N, av.begin() + (b + 1) * N},
                                 {gv.begin(), gv.end()}});
    }
    return out;
}

Tensor avg_pool_merge(const Tensor& tokens) {
    if (tokens.rank() != 3 || tokens.size(1) == 0) {
        throw DimensionError("avg_pool_merge expects [B,N,C] with N >= 1, got " + shape_string(tokens.shape()));
    }
    return ops::mean(tokens, 1);
}

Tensor class_token_readout(const Tensor& tokens, bool has_class_token) {
    if (!has_class_token) throw ConfigError("class-token readout on a model without a class token");
    if (tokens.rank() != 3 || tokens.size(1) < 2) {
        throw DimensionError("class_token_readout expects [B,N+1,C], got " + shape_string(tokens.shape()));
    }
    const std::size_t B = tokens.size(0), C = tokens.size(2);
    return ops::reshape(ops::narrow(tokens, 1, 0, 1), {B, C});
}

std::vector<GrayImage> weight_grids(const MergeWeights& weights, const std::vector<TokenOrigin>& provenance,
                                    std::size_t upscale_factor) {
    const auto& w = weights.weights;
    if (w.size() != provenance.size()) {
        throw DimensionError("provenance covers " + std::to_string(provenance.size()) + " tokens, weights have " +
                             std::to_string(w.size()));
    }
    if (w.empty()) return {};
    std::size_t branches = 0;
    for (const auto& o : provenance) branches = std::max(branches, o.branch + 1);
    std::vector<std::size_t> rows(branches, 0), cols(branches, 0);
    for (const auto& o : provenance) {
        rows[o.branch] = std::max(rows[o.branch], o.row + 1);
        cols[o.branch] = std::max(cols[o.branch], o.col + 1);
    }
    std::vector<GrayImage> grids(branches);
    for (std::size_t b = 0; b < branches; ++b) {
        grids[b] = {cols[b], rows[b], std::vector<std::uint8_t>(rows[b] * cols[b], 0)};
    }
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto& o = provenance[i];
        const double level = span > 0.0 ? std::round(255.0 * (w[i] - *lo) / span) : 128.0;
        grids[o.branch].pixels[o.row * grids[o.branch].width + o.col] = static_cast<std::uint8_t>(level);
    }
    for (auto& g : grids) g = upscale(g, upscale_factor);
    return grids;
}

std::vector<std::filesystem::path> export_weight_grids(const std::filesystem::path& dir, const std::string& image_id,
                                                       const MergeWeights& weights,
                                                       const std::vector<TokenOrigin>& provenance,
                                                       std::size_t upscale_factor) {
    const auto grids = weight_grids(weights, provenance, upscale_factor);
    std::vector<std::filesystem::path> paths;
    for (std::size_t k = 0; k < grids.size(); ++k) {
        paths.push_back(dir / (image_id + ".branch" + std::to_string(k) + ".pgm"));
        write_pgm(paths.back(), grids[k]);
    }
    return paths;
}

}  // namespace mvit
