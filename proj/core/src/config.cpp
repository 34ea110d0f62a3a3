#include "mvit/config.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "mvit/errors.hpp"

namespace mvit {

using nlohmann::json;

std::string_view to_string(FinalPool v) { return v == FinalPool::none ? "none" : "global_avg"; }

std::string_view to_string(EmbeddingKind v) {
    switch (v) {
        case EmbeddingKind::naive: return "naive";
        case EmbeddingKind::conv: return "conv";
        case EmbeddingKind::irregular: return "irregular";
    }
    return "?";
}

std::string_view to_string(MergeMode v) {
    switch (v) {
        case MergeMode::class_token: return "class_token";
        case MergeMode::avg_pool: return "avg_pool";
        case MergeMode::apm: return "apm";
    }
    return "?";
}

FinalPool final_pool_from_string(std::string_view s) {
    if (s == "none") return FinalPool::none;
    if (s == "global_avg") return FinalPool::global_avg;
    throw ConfigError("unknown final_pool '" + std::string(s) + "' (expected none|global_avg)");
}

EmbeddingKind embedding_from_string(std::string_view s) {
    if (s == "naive") return EmbeddingKind::naive;
    if (s == "conv") return EmbeddingKind::conv;
    if (s == "irregular") return EmbeddingKind::irregular;
    throw ConfigError("unknown embedding '" + std::string(s) + "' (expected naive|conv|irregular)");
}

MergeMode merge_from_string(std::string_view s) {
    if (s == "class_token") return MergeMode::class_token;
    if (s == "avg_pool") return MergeMode::avg_pool;
    if (s == "apm") return MergeMode::apm;
    throw ConfigError("unknown merge '" + std::string(s) + "' (expected class_token|avg_pool|apm)");
}

std::size_t depthwise_kernel(std::size_t stride) { return stride == 7 ? 7 : 3; }

std::size_t stage_output_extent(std::size_t extent, std::size_t stride) {
    const std::size_t k = depthwise_kernel(stride);
    const std::size_t p = (k - 1) / 2;
    if (stride == 0 || extent + 2 * p < k) return 0;
    return (extent + 2 * p - k) / stride + 1;
}

std::size_t ModelConfig::patch_tokens() const {
    switch (embedding) {
        case EmbeddingKind::naive: return patch_size == 0 ? 0 : (input_size / patch_size) * (input_size / patch_size);
        case EmbeddingKind::conv:
        case EmbeddingKind::irregular: {
            std::size_t n = 0;
            for (const auto& b : branches) n += b.tokens();
            return n;
        }
    }
    return 0;
}

namespace {

[[noreturn]] void violated(const std::string& what) { throw ConfigError("invalid model config: " + what); }

void validate_branch(const BranchSpec& b, std::size_t index, const ModelConfig& cfg) {
    const std::string tag = "branch " + std::to_string(index) + ": ";
    if (b.stage_channels.empty()) violated(tag + "needs at least one stage");
    if (b.stage_channels.size() != b.stage_strides.size()) {
        violated(tag + "len(stage_channels) != len(stage_strides)");
    }
    if (b.expansion == 0 || b.se_reduction == 0) violated(tag + "expansion and se_reduction must be positive");
    if (b.grid_h == 0 || b.grid_w == 0) violated(tag + "grid must be positive");
    if (b.grid_h != b.grid_w) violated(tag + "only square grids are supported");
    for (std::size_t c : b.stage_channels) {
        if (c == 0) violated(tag + "stage channels must be positive");
    }
    if (b.stage_strides.front() != 1 && b.stage_strides.front() != 2) violated(tag + "stem stride must be 1 or 2");
    for (std::size_t i = 1; i < b.stage_strides.size(); ++i) {
        const std::size_t s = b.stage_strides[i];
        if (s != 1 && s != 2 && s != 7) violated(tag + "block strides must be in {1,2,7}");
        if (b.stage_channels[i - 1] * b.expansion / b.se_reduction == 0) violated(tag + "SE bottleneck is empty");
    }
    std::size_t extent = cfg.input_size;
    std::size_t stride_product = 1;
    for (std::size_t s : b.stage_strides) {
        extent = stage_output_extent(extent, s);
        stride_product *= s;
        if (extent == 0) violated(tag + "stride schedule shrinks the map below one cell");
    }
    if (b.final_pool == FinalPool::none) {
        if (stride_product * b.grid_h != cfg.input_size || extent != b.grid_h) {
            violated(tag + "branch output grid mismatch: schedule reaches " + std::to_string(extent) + "x" +
                     std::to_string(extent) + " but grid is " + std::to_string(b.grid_h) + "x" +
                     std::to_string(b.grid_w));
        }
        if (b.stage_channels.back() != cfg.channels) {
            violated(tag + "last stage channels " + std::to_string(b.stage_channels.back()) +
                     " must equal model channel " + std::to_string(cfg.channels));
        }
    } else if (b.grid_h != 1 || b.grid_w != 1) {
        violated(tag + "global pooling yields a 1x1 grid");
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (input_size < 8) violated("input_size must be at least 8");
    if (channels == 0 || heads == 0 || depth == 0 || mlp_ratio == 0) {
        violated("channel, depth, heads and mlp_ratio must be positive");
    }
    if (channels % heads != 0) {
        violated("channel " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
    }
    if (num_classes == 0) violated("num_classes must be positive");
    if (!(droppath_max >= 0.0 && droppath_max < 1.0)) violated("droppath_max must lie in [0,1)");
    if (!(layernorm_eps > 0.0)) violated("layernorm_eps must be positive");
    switch (embedding) {
        case EmbeddingKind::naive:
            if (patch_size == 0 || input_size % patch_size != 0) {
                violated("input_size " + std::to_string(input_size) + " not divisible by patch_size " +
                         std::to_string(patch_size));
            }
            break;
        case EmbeddingKind::conv:
            if (branches.size() != 1 || branches.front().final_pool != FinalPool::none) {
                violated("conv embedding takes exactly one unpooled branch");
            }
            break;
        case EmbeddingKind::irregular:
            if (branches.empty()) violated("irregular embedding needs at least one branch");
            break;
    }
    if (embedding != EmbeddingKind::naive) {
        for (std::size_t i = 0; i < branches.size(); ++i) validate_branch(branches[i], i, *this);
    }
    if (merge == MergeMode::apm && channels / 4 == 0) violated("APM needs channel >= 4");
}

std::vector<BranchSpec> irregular_branches_224(std::size_t channels, const std::vector<std::size_t>& ramp) {
    if (ramp.size() != 4) throw ConfigError("224-pixel branch ramp takes four widths");
    BranchSpec a;
    a.grid_h = a.grid_w = 7;
    a.stage_channels = {ramp[0], ramp[1], ramp[2], ramp[3], channels};
    a.stage_strides = {2, 2, 2, 2, 2};

    BranchSpec b;
    b.grid_h = b.grid_w = 4;
    b.stage_channels = {ramp[0], ramp[1], ramp[2], channels};
    b.stage_strides = {2, 2, 2, 7};

    BranchSpec c;
    c.grid_h = c.grid_w = 1;
    c.stage_channels = {ramp[0], ramp[1], ramp[2], ramp[3]};
    c.stage_strides = {2, 2, 2, 2};
    c.final_pool = FinalPool::global_avg;
    return {a, b, c};
}

BranchSpec conv_trunk(std::size_t input_size, std::size_t channels) {
    BranchSpec t;
    t.grid_h = t.grid_w = input_size / 16;
    if (input_size >= 128) {
        t.stage_channels = {16, 32, 64, channels};
    } else {
        t.stage_channels = {8, 16, 24, channels};
    }
    t.stage_strides = {2, 2, 2, 2};
    return t;
}

std::vector<std::string> preset_names() { return {"880M", "610M", "310M", "desk-64", "desk-32"}; }

ModelConfig model_preset(std::string_view name) {
    ModelConfig cfg;
    cfg.preset_name = std::string(name);
    if (name == "880M" || name == "610M" || name == "310M") {
        cfg.input_size = 224;
        cfg.num_classes = 1000;
        std::vector<std::size_t> ramp{16, 32, 64, 128};
        if (name == "880M") {
            cfg.channels = 300, cfg.depth = 8, cfg.heads = 12;
        } else if (name == "610M") {
            cfg.channels = 264, cfg.depth = 6, cfg.heads = 12;
        } else {
            cfg.channels = 210, cfg.depth = 5, cfg.heads = 10;
            // Narrower stems keep the smallest model inside its MAC budget.
            ramp = {16, 24, 40, 80};
        }
        cfg.mlp_ratio = 4;
        cfg.branches = irregular_branches_224(cfg.channels, ramp);
        return cfg;
    }
    if (name == "desk-64") {
        cfg.input_size = 64;
        cfg.channels = 64, cfg.depth = 2, cfg.heads = 4, cfg.mlp_ratio = 4;
        cfg.num_classes = 10;
        BranchSpec a{4, 4, {8, 16, 24, 64}, {2, 2, 2, 2}};
        BranchSpec b{2, 2, {8, 16, 24, 32, 64}, {2, 2, 2, 2, 2}};
        BranchSpec c{1, 1, {8, 16, 24}, {2, 2, 2}};
        c.final_pool = FinalPool::global_avg;
        cfg.branches = {a, b, c};
        return cfg;
    }
    if (name == "desk-32") {
        cfg.input_size = 32;
        cfg.channels = 32, cfg.depth = 2, cfg.heads = 2, cfg.mlp_ratio = 4;
        cfg.num_classes = 10;
        BranchSpec a{2, 2, {8, 16, 24, 32}, {2, 2, 2, 2}};
        BranchSpec c{1, 1, {8, 16}, {2, 2}};
        c.final_pool = FinalPool::global_avg;
        cfg.branches = {a, c};
        return cfg;
    }
    std::string known;
    for (const auto& p : preset_names()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

// ---------------------------------------------------------------------------------------------
// JSON

namespace {

json branch_to_json(const BranchSpec& b) {
    return json{{"grid", {b.grid_h, b.grid_w}},
                {"stage_channels", b.stage_channels},
                {"stage_strides", b.stage_strides},
                {"expansion", b.expansion},
                {"se_reduction", b.se_reduction},
                {"final_pool", to_string(b.final_pool)}};
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get_as(const json& obj, const char* key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::size_t get_count(const json& obj, const char* key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + " must be a nonnegative integer");
    return v.get<std::size_t>();
}

BranchSpec branch_from_json(const json& j, const std::string& where) {
    reject_unknown(j, {"grid", "stage_channels", "stage_strides", "expansion", "se_reduction", "final_pool"}, where);
    BranchSpec b;
    auto grid = get_as<std::vector<std::size_t>>(j, "grid", where);
    if (grid.size() != 2) throw ConfigError(where + ".grid must be [rows, cols]");
    b.grid_h = grid[0];
    b.grid_w = grid[1];
    b.stage_channels = get_as<std::vector<std::size_t>>(j, "stage_channels", where);
    b.stage_strides = get_as<std::vector<std::size_t>>(j, "stage_strides", where);
    if (j.contains("expansion")) b.expansion = get_count(j, "expansion", where);
    if (j.contains("se_reduction")) b.se_reduction = get_count(j, "se_reduction", where);
    if (j.contains("final_pool")) b.final_pool = final_pool_from_string(get_as<std::string>(j, "final_pool", where));
    return b;
}

}  // namespace

std::string to_json(const ModelConfig& cfg) {
    json branches = json::array();
    for (const auto& b : cfg.branches) branches.push_back(branch_to_json(b));
    json j{{"preset", cfg.preset_name},
           {"input_size", cfg.input_size},
           {"channel", cfg.channels},
           {"depth", cfg.depth},
           {"heads", cfg.heads},
           {"mlp_ratio", cfg.mlp_ratio},
           {"embedding", to_string(cfg.embedding)},
           {"branches", branches},
           {"patch_size", cfg.patch_size},
           {"merge", to_string(cfg.merge)},
           {"positional", cfg.positional},
           {"droppath_max", cfg.droppath_max},
           {"num_classes", cfg.num_classes},
           {"layernorm_eps", cfg.layernorm_eps}};
    return j.dump(2);
}

ModelConfig model_config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    const std::string where = "model config";
    reject_unknown(j,
                   {"preset", "base_preset", "input_size", "channel", "depth", "heads", "mlp_ratio", "embedding",
                    "branches", "patch_size", "merge", "positional", "droppath_max", "num_classes", "layernorm_eps"},
                   where);
    // A config may start from a preset and override fields.
    ModelConfig cfg;
    if (j.contains("base_preset")) cfg = model_preset(get_as<std::string>(j, "base_preset", where));
    if (j.contains("preset")) cfg.preset_name = get_as<std::string>(j, "preset", where);
    if (j.contains("input_size")) cfg.input_size = get_count(j, "input_size", where);
    if (j.contains("channel")) cfg.channels = get_count(j, "channel", where);
    if (j.contains("depth")) cfg.depth = get_count(j, "depth", where);
    if (j.contains("heads")) cfg.heads = get_count(j, "heads", where);
    if (j.contains("mlp_ratio")) cfg.mlp_ratio = get_count(j, "mlp_ratio", where);
    if (j.contains("embedding")) cfg.embedding = embedding_from_string(get_as<std::string>(j, "embedding", where));
    if (j.contains("branches")) {
        const json& arr = j.at("branches");
        if (!arr.is_array()) throw ConfigError("model config.branches must be an array");
        cfg.branches.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            cfg.branches.push_back(branch_from_json(arr[i], "branches[" + std::to_string(i) + "]"));
        }
    }
    if (j.contains("patch_size")) cfg.patch_size = get_count(j, "patch_size", where);
    if (j.contains("merge")) cfg.merge = merge_from_string(get_as<std::string>(j, "merge", where));
    if (j.contains("positional")) cfg.positional = get_as<bool>(j, "positional", where);
    if (j.contains("droppath_max")) cfg.droppath_max = get_as<double>(j, "droppath_max", where);
    if (j.contains("num_classes")) cfg.num_classes = get_count(j, "num_classes", where);
    if (j.contains("layernorm_eps")) cfg.layernorm_eps = get_as<double>(j, "layernorm_eps", where);
    cfg.validate();
    return cfg;
}

}  // namespace mvit
