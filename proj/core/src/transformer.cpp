#include "mvit/transformer.hpp"

#include <cmath>

#include "mvit/errors.hpp"
#include "mvit/rng.hpp"

namespace mvit {

void BlockConfig::validate() const {
    if (channels == 0 || heads == 0 || channels % heads != 0) {
        throw ConfigError("block channel " + std::to_string(channels) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
    if (!(droppath_rate >= 0.0 && droppath_rate < 1.0)) throw ConfigError("droppath rate must lie in [0,1)");
}

std::vector<double> droppath_schedule(std::size_t depth, double max_rate) {
    std::vector<double> rates(depth, 0.0);
    if (depth < 2) return rates;
    for (std::size_t i = 0; i < depth; ++i) {
        rates[i] = max_rate * static_cast<double>(i) / static_cast<double>(depth - 1);
    }
    return rates;
}

Tensor drop_path(const Tensor& branch, double rate, const ForwardContext& ctx, std::uint64_t layer_key) {
    if (!ctx.training || rate == 0.0) return branch;
    const std::size_t B = branch.size(0);
    if (!ctx.sample_ids.empty() && ctx.sample_ids.size() != B) {
        throw DimensionError("drop_path: " + std::to_string(ctx.sample_ids.size()) + " sample ids for batch " +
                             std::to_string(B));
    }
    std::vector<double> keep(B);
    for (std::size_t b = 0; b < B; ++b) {
        const std::uint64_t id = ctx.sample_ids.empty() ? b : ctx.sample_ids[b];
        Rng rng = make_rng(ctx.seed, "droppath", {ctx.epoch, id, layer_key});
        keep[b] = uniform01(rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
    }
    return ops::mul_prefix(branch, Tensor::from({B}, std::move(keep)));
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ParameterStore& store, const std::string& name, const BlockConfig& cfg)
    : channels_(cfg.channels), heads_(cfg.heads) {
    cfg.validate();
    qkv_ = Linear::create(store, join_name(name, "qkv"), cfg.channels, 3 * cfg.channels);
    proj_ = Linear::create(store, join_name(name, "proj"), cfg.channels, cfg.channels);
}

MultiHeadSelfAttention::Heads MultiHeadSelfAttention::split_heads(const Tensor& x) const {
    if (x.rank() != 3 || x.size(2) != channels_) {
        throw DimensionError("attention expects [B,N," + std::to_string(channels_) + "], got " + shape_string(x.shape()));
    }
    const std::size_t B = x.size(0), N = x.size(1), d = channels_ / heads_;
    // [B,N,3C] -> [3,B,H,N,d]
    Tensor qkv = ops::permute(ops::reshape(qkv_(x), {B, N, 3, heads_, d}), {2, 0, 3, 1, 4});
    auto pick = [&](std::size_t i) { return ops::reshape(ops::narrow(qkv, 0, i, 1), {B, heads_, N, d}); };
    return {pick(0), pick(1), pick(2)};
}

Tensor MultiHeadSelfAttention::attention_weights(const Tensor& x) const {
    const Heads h = split_heads(x);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels_ / heads_));
    Tensor scores = ops::scale(ops::bmm(h.q, ops::permute(h.k, {0, 1, 3, 2})), scale);
    return ops::softmax(scores, 3);
}

Tensor MultiHeadSelfAttention::operator()(const Tensor& x) const {
    const Heads h = split_heads(x);
    const std::size_t B = x.size(0), N = x.size(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels_ / heads_));
    Tensor attn = ops::softmax(ops::scale(ops::bmm(h.q, ops::permute(h.k, {0, 1, 3, 2})), scale), 3);
    Tensor mixed = ops::permute(ops::bmm(attn, h.v), {0, 2, 1, 3});  // [B,N,H,d]
    return proj_(ops::reshape(mixed, {B, N, channels_}));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, const BlockConfig& cfg) {
    fc1_ = Linear::create(store, join_name(name, "fc1"), cfg.channels, cfg.hidden());
    fc2_ = Linear::create(store, join_name(name, "fc2"), cfg.hidden(), cfg.channels);
}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, const BlockConfig& cfg,
                                   std::size_t index)
    : cfg_(cfg), index_(index) {
    cfg.validate();
    norm1_ = LayerNorm::create(store, join_name(name, "norm1"), cfg.channels, cfg.layernorm_eps);
    attn_ = MultiHeadSelfAttention(store, join_name(name, "attn"), cfg);
    norm2_ = LayerNorm::create(store, join_name(name, "norm2"), cfg.channels, cfg.layernorm_eps);
    ffn_ = FeedForward(store, join_name(name, "ffn"), cfg);
}

Tensor TransformerBlock::operator()(const Tensor& x, const ForwardContext& ctx) const {
    Tensor y = ops::add(x, drop_path(attn_(norm1_(x)), cfg_.droppath_rate, ctx, 2 * index_));
    return ops::add(y, drop_path(ffn_(norm2_(y)), cfg_.droppath_rate, ctx, 2 * index_ + 1));
}

Tensor add_positional(const Tensor& tokens, const Tensor& pos, bool enabled) {
    if (!enabled) return tokens;
    if (tokens.rank() != 3 || pos.rank() != 2 || pos.size(0) != tokens.size(1) || pos.size(1) != tokens.size(2)) {
        throw ConfigError("positional table " + shape_string(pos.shape()) + " does not match tokens " +
                          shape_string(tokens.shape()));
    }
    return ops::add(tokens, pos);
}

Tensor class_token_attach(const Tensor& tokens, const Tensor& class_token) {
    if (tokens.rank() != 3 || class_token.rank() != 2 || class_token.size(0) != 1 ||
        class_token.size(1) != tokens.size(2)) {
        throw DimensionError("class token " + shape_string(class_token.shape()) + " does not fit tokens " +
                             shape_string(tokens.shape()));
    }
    return ops::concat({ops::repeat_leading(class_token, tokens.size(0)), tokens}, 1);
}

}  // namespace mvit
