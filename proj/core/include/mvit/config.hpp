#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mvit {

enum class FinalPool { none, global_avg };
enum class EmbeddingKind { naive, conv, irregular };
enum class MergeMode { class_token, avg_pool, apm };

std::string_view to_string(FinalPool v);
std::string_view to_string(EmbeddingKind v);
std::string_view to_string(MergeMode v);
FinalPool final_pool_from_string(std::string_view s);
EmbeddingKind embedding_from_string(std::string_view s);
MergeMode merge_from_string(std::string_view s);

/// One convolutional branch of the patch embedding.
///
/// Stage 0 is an ordinary 3x3 stem convolution; every later stage is an inverted-residual
/// block with squeeze-excitation. `stage_channels[i]` and `stage_strides[i]` describe stage i.
/// Without a final pool the branch ends at `grid_h x grid_w` cells of the last stage's
/// channels, which must equal the model channel count. With a global pool the branch reduces
/// to a single cell and a linear layer maps the last stage's channels to the model width.
struct BranchSpec {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::size_t> stage_channels;
    std::vector<std::size_t> stage_strides;
    std::size_t expansion = 4;
    std::size_t se_reduction = 4;
    FinalPool final_pool = FinalPool::none;

    std::size_t tokens() const { return grid_h * grid_w; }

    bool operator==(const BranchSpec&) const = default;
};

/// Depth-wise kernel used for a given stride: 7x7 for stride 7, 3x3 otherwise.
std::size_t depthwise_kernel(std::size_t stride);

/// Spatial extent after one stage (stem or block) with the given stride.
std::size_t stage_output_extent(std::size_t extent, std::size_t stride);

struct ModelConfig {
    std::string preset_name = "custom";
    std::size_t input_size = 224;
    std::size_t channels = 300;
    std::size_t depth = 8;
    std::size_t heads = 12;
    std::size_t mlp_ratio = 4;
    EmbeddingKind embedding = EmbeddingKind::irregular;
    std::vector<BranchSpec> branches;  // irregular: one per grid; conv: exactly one
    std::size_t patch_size = 16;       // naive embedding only
    MergeMode merge = MergeMode::apm;
    bool positional = true;
    double droppath_max = 0.1;
    std::size_t num_classes = 1000;
    double layernorm_eps = 1e-6;

    /// Patch tokens emitted by the embedding (class token excluded).
    std::size_t patch_tokens() const;
    /// Tokens seen by the transformer blocks.
    std::size_t sequence_length() const { return patch_tokens() + (merge == MergeMode::class_token ? 1 : 0); }
    std::size_t head_dim() const { return channels / heads; }

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Names accepted by model_preset(): "880M", "610M", "310M", "desk-64", "desk-32".
std::vector<std::string> preset_names();
ModelConfig model_preset(std::string_view name);

/// Branch schedules for the 224-pixel presets. `ramp` lists the channel widths before the
/// final model-width stage.
std::vector<BranchSpec> irregular_branches_224(std::size_t channels, const std::vector<std::size_t>& ramp);

/// Single-branch convolutional trunk reaching a (input/16)^2 grid.
BranchSpec conv_trunk(std::size_t input_size, std::size_t channels);

std::string to_json(const ModelConfig& cfg);
/// Strict parse: unknown keys, missing required keys and wrong types are ConfigErrors.
ModelConfig model_config_from_json(std::string_view text);

}  // namespace mvit
