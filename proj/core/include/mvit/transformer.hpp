#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvit/layers.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

struct BlockConfig {
    std::size_t channels = 0;
    std::size_t heads = 1;
    std::size_t mlp_ratio = 4;
    double droppath_rate = 0.0;
    double layernorm_eps = 1e-6;

    std::size_t head_dim() const { return channels / heads; }
    std::size_t hidden() const { return channels * mlp_ratio; }
    void validate() const;
};

/// Per-call state for stochastic layers. Drop decisions for sample b come from a stream keyed by
/// (seed, epoch, sample_ids[b], layer), so they do not depend on batch composition or order.
struct ForwardContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::vector<std::uint64_t> sample_ids;  // empty: positions 0..B-1
};

/// Linear ramp 0 -> max_rate over `depth` blocks.
std::vector<double> droppath_schedule(std::size_t depth, double max_rate);

/// Drops a residual branch per sample with probability `rate` and rescales survivors by
/// 1/(1-rate). Identity at evaluation or when rate is 0.
Tensor drop_path(const Tensor& branch, double rate, const ForwardContext& ctx, std::uint64_t layer_key);

class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(ParameterStore& store, const std::string& name, const BlockConfig& cfg);

    /// [B,N,C] -> [B,N,C].
    Tensor operator()(const Tensor& x) const;
    /// Softmax attention maps [B,H,N,N].
    Tensor attention_weights(const Tensor& x) const;

private:
    struct Heads {
        Tensor q, k, v;  // [B,H,N,d]
    };
    Heads split_heads(const Tensor& x) const;

    std::size_t channels_ = 0;
    std::size_t heads_ = 1;
    Linear qkv_;
    Linear proj_;
};

class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& name, const BlockConfig& cfg);
    Tensor operator()(const Tensor& x) const { return fc2_(ops::gelu(fc1_(x))); }

private:
    Linear fc1_;
    Linear fc2_;
};

/// Pre-norm block: x + DropPath(MSA(LN(x))), then + DropPath(FFN(LN(x))).
class TransformerBlock {
public:
    TransformerBlock(ParameterStore& store, const std::string& name, const BlockConfig& cfg, std::size_t index);

    Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
    const MultiHeadSelfAttention& attention() const { return attn_; }
    const LayerNorm& norm1() const { return norm1_; }
    const BlockConfig& config() const { return cfg_; }

private:
    BlockConfig cfg_;
    std::size_t index_;
    LayerNorm norm1_;
    MultiHeadSelfAttention attn_;
    LayerNorm norm2_;
    FeedForward ffn_;
};

/// tokens [B,N,C] + pos [N,C] when enabled; the input unchanged otherwise.
Tensor add_positional(const Tensor& tokens, const Tensor& pos, bool enabled);

/// Prepends a learnable [1,C] token at sequence index 0: [B,N,C] -> [B,N+1,C].
Tensor class_token_attach(const Tensor& tokens, const Tensor& class_token);

}  // namespace mvit
