#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mvit/config.hpp"
#include "mvit/layers.hpp"
#include "mvit/patch_embedding.hpp"
#include "mvit/patch_merging.hpp"
#include "mvit/tensor.hpp"
#include "mvit/transformer.hpp"

namespace mvit {

struct ModelOutput {
    Tensor logits;      // [B,K]
    MergeResult merge;  // weights and per_image are empty unless the readout is adaptive
};

/// Patch embedding -> [class token] -> [positional table] -> blocks -> layer norm -> readout ->
/// linear head. Parameters live in the model's ParameterStore; the model is move-only because
/// copies would alias them.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& store() { return *store_; }
    const ParameterStore& store() const { return *store_; }
    const std::vector<TokenOrigin>& provenance() const { return embedding_->provenance(); }

    /// images [B,3,S,S] -> patch tokens [B,N,C] (before class token and positions).
    Tensor embed(const Tensor& images) const;
    /// Everything after the embedding.
    ModelOutput forward_tokens(const Tensor& patch_tokens, const ForwardContext& ctx) const;
    ModelOutput forward(const Tensor& images, const ForwardContext& ctx) const;
    ModelOutput forward(const Tensor& images, bool training = false) const;

    /// [N_seq, C] positional table actually added, class row first when present.
    Tensor positional_table() const;
    const std::vector<TransformerBlock>& blocks() const { return blocks_; }
    const AdaptivePatchMerging* adaptive_merge() const { return apm_ ? &*apm_ : nullptr; }

private:
    ModelConfig cfg_;
    std::unique_ptr<ParameterStore> store_;
    std::unique_ptr<PatchEmbedding> embedding_;
    Tensor class_token_;  // [1,C]
    Tensor pos_patches_;  // [N,C]
    Tensor pos_class_;    // [1,C]
    std::vector<TransformerBlock> blocks_;
    LayerNorm norm_;
    std::unique_ptr<AdaptivePatchMerging> apm_;
    Linear head_;
};

struct AblationVariant {
    std::string label;  // "<embedding>+<merge>"
    ModelConfig config;
};

/// Every {naive, conv, irregular} x {class_token, avg_pool, apm} combination, each resized by
/// depth first and then width so that its MAC count lies within 15% of the base config's.
std::vector<AblationVariant> ablation_variants(const ModelConfig& base);

/// Returns a copy whose model width is `channels`; unpooled branches end at the new width.
ModelConfig with_channels(ModelConfig cfg, std::size_t channels);

/// Binary parameter container. Layout (little-endian):
///   "MVITCKPT" | u32 version | u32 reserved | u64 record count |
///   per record: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 values[numel]
/// The model config is written next to it as `<path>.json`.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<double> values;
};
std::vector<CheckpointRecord> read_checkpoint_records(const std::filesystem::path& path);
std::filesystem::path checkpoint_config_path(const std::filesystem::path& path);

}  // namespace mvit
