#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mvit/layers.hpp"
#include "mvit/patch_embedding.hpp"
#include "mvit/pgm.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

/// Per-image snapshot of the merge weights.
struct MergeWeights {
    std::vector<double> weights;          // normalized, sums to 1
    std::vector<double> adaptive_logits;  // per-token MLP output before the sigmoid
    std::vector<double> global_logits;    // shared by every image

    bool operator==(const MergeWeights&) const = default;
};

struct MergeResult {
    Tensor feature;  // [B,C]
    Tensor weights;  // [B,N], empty for non-adaptive readouts
    std::vector<MergeWeights> per_image;
};

/// Weighted token sum. Each token gets sigmoid(MLP(token)) * sigmoid(global_logit), and the
/// products are normalized to sum to one.
class AdaptivePatchMerging {
public:
    AdaptivePatchMerging() = default;
    AdaptivePatchMerging(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t tokens);

    /// tokens [B,N,C] -> feature [B,C]. Throws NumericalError when a weight sum underflows.
    MergeResult operator()(const Tensor& tokens) const;

    const Linear& fc1() const { return fc1_; }
    const Linear& fc2() const { return fc2_; }
    const Tensor& global_logits() const { return global_logits_; }
    std::size_t tokens() const { return tokens_; }

private:
    std::size_t channels_ = 0;
    std::size_t tokens_ = 0;
    Linear fc1_;
    Linear fc2_;
    Tensor global_logits_;  // [N]
};

/// Functional form used by the module above: explicit MLP and logits.
MergeResult apm_forward(const Tensor& tokens, const Linear& fc1, const Linear& fc2, const Tensor& global_logits);

/// Unweighted token mean, [B,N,C] -> [B,C].
Tensor avg_pool_merge(const Tensor& tokens);

/// Token 0 of [B,N+1,C]. Throws ConfigError when the sequence carries no class token.
Tensor class_token_readout(const Tensor& tokens, bool has_class_token);

/// One grayscale grid per branch, min-max normalized over all of the image's weights. When
/// every weight is equal the grids are mid-gray (128).
std::vector<GrayImage> weight_grids(const MergeWeights& weights, const std::vector<TokenOrigin>& provenance,
                                    std::size_t upscale_factor = 1);

/// Writes `<image_id>.branch<k>.pgm` into `dir` and returns the paths in branch order.
std::vector<std::filesystem::path> export_weight_grids(const std::filesystem::path& dir, const std::string& image_id,
                                                       const MergeWeights& weights,
                                                       const std::vector<TokenOrigin>& provenance,
                                                       std::size_t upscale_factor = 1);

}  // namespace mvit
