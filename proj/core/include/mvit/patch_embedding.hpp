#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mvit/config.hpp"
#include "mvit/layers.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

/// Where a token came from: branch index and its cell in that branch's grid.
struct TokenOrigin {
    std::size_t branch = 0;
    std::size_t row = 0;
    std::size_t col = 0;

    bool operator==(const TokenOrigin&) const = default;
};

/// Tokens [B, N, C] plus the grid cell each of the N positions came from.
struct TokenSet {
    Tensor tokens;
    std::vector<TokenOrigin> provenance;

    std::size_t count() const { return provenance.size(); }
};

/// Row-major provenance for a sequence of grids, branch by branch.
std::vector<TokenOrigin> grid_provenance(const std::vector<std::pair<std::size_t, std::size_t>>& grids);

/// Channel gate: global pool -> linear C/r -> relu -> linear C -> sigmoid.
struct SqueezeExcite {
    Linear reduce;
    Linear expand;

    static SqueezeExcite create(ParameterStore& store, const std::string& name, std::size_t channels,
                                std::size_t reduction);
    /// [B,C,H,W] -> [B,C] gate values in (0,1).
    Tensor gate(const Tensor& x) const;
    Tensor operator()(const Tensor& x) const { return ops::mul_prefix(x, gate(x)); }
};

/// 1x1 expand -> relu -> depth-wise kxk stride s -> relu -> SE -> 1x1 project, with an identity
/// skip when the stride is 1 and the channel count is preserved.
struct InvertedResidualSE {
    Conv2d expand;
    Conv2d depthwise;
    SqueezeExcite se;
    Conv2d project;
    bool skip = false;

    static InvertedResidualSE create(ParameterStore& store, const std::string& name, std::size_t in,
                                     std::size_t out, std::size_t stride, std::size_t expansion,
                                     std::size_t se_reduction);
    /// Activation entering the projection (after the SE scale).
    Tensor hidden(const Tensor& x) const;
    Tensor operator()(const Tensor& x) const;
};

/// Stem convolution plus inverted-residual stages, optionally pooled to a single token.
class ConvBranch {
public:
    ConvBranch(ParameterStore& store, const std::string& name, const BranchSpec& spec, std::size_t channels);

    /// [B,3,S,S] -> [B, grid_h*grid_w, C].
    Tensor operator()(const Tensor& images) const;
    const BranchSpec& spec() const { return spec_; }

private:
    BranchSpec spec_;
    Conv2d stem_;
    std::vector<InvertedResidualSE> stages_;
    Linear pool_proj_;  // defined only with a global pool
};

class PatchEmbedding {
public:
    virtual ~PatchEmbedding() = default;
    /// images [B,3,S,S] -> TokenSet with tokens [B,N,C].
    virtual TokenSet operator()(const Tensor& images) const = 0;
    virtual std::size_t tokens() const = 0;
    virtual const std::vector<TokenOrigin>& provenance() const = 0;
};

/// Evenly split patches, flattened as (channel, dy, dx) and linearly projected.
class NaivePatchEmbedding final : public PatchEmbedding {
public:
    NaivePatchEmbedding(ParameterStore& store, const std::string& name, std::size_t input_size,
                        std::size_t patch, std::size_t channels);
    TokenSet operator()(const Tensor& images) const override;
    std::size_t tokens() const override { return provenance_.size(); }
    const std::vector<TokenOrigin>& provenance() const override { return provenance_; }
    const Linear& projection() const { return proj_; }

private:
    std::size_t input_size_;
    std::size_t patch_;
    Linear proj_;
    std::vector<TokenOrigin> provenance_;
};

/// One or more convolutional branches whose token grids are concatenated in branch order.
/// A single branch is the convolutional-stem ablation; three branches with 7x7, 4x4 and 1x1
/// grids form the irregular embedding.
class BranchPatchEmbedding final : public PatchEmbedding {
public:
    BranchPatchEmbedding(ParameterStore& store, const std::string& name, const std::vector<BranchSpec>& specs,
                         std::size_t input_size, std::size_t channels);
    TokenSet operator()(const Tensor& images) const override;
    std::size_t tokens() const override { return provenance_.size(); }
    const std::vector<TokenOrigin>& provenance() const override { return provenance_; }
    const std::vector<ConvBranch>& branches() const { return branches_; }

private:
    std::size_t input_size_;
    std::vector<ConvBranch> branches_;
    std::vector<TokenOrigin> provenance_;
};

std::unique_ptr<PatchEmbedding> make_patch_embedding(ParameterStore& store, const ModelConfig& cfg);

/// Inverse of the naive patch flattening: [B, N, C*p*p] -> [B, C, H, W]. Not differentiable.
Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t patch);

}  // namespace mvit
