#include "mvit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mvit/errors.hpp"
#include "mvit/flops.hpp"

namespace mvit {

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(std::make_unique<ParameterStore>(seed)) {
    cfg_.validate();
    ParameterStore& s = *store_;
    const std::size_t C = cfg_.channels;
    embedding_ = make_patch_embedding(s, cfg_);
    const bool cls = cfg_.merge == MergeMode::class_token;
    if (cls) class_token_ = s.truncated_normal("cls_token", {1, C});
    if (cfg_.positional) {
        pos_patches_ = s.truncated_normal("pos_embed.patches", {cfg_.patch_tokens(), C});
        if (cls) pos_class_ = s.truncated_normal("pos_embed.cls", {1, C});
    }
    const auto rates = droppath_schedule(cfg_.depth, cfg_.droppath_max);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
        BlockConfig bc{C, cfg_.heads, cfg_.mlp_ratio, rates[i], cfg_.layernorm_eps};
        blocks_.emplace_back(s, "blocks." + std::to_string(i), bc, i);
    }
    norm_ = LayerNorm::create(s, "norm", C, cfg_.layernorm_eps);
    if (cfg_.merge == MergeMode::apm) {
        apm_ = std::make_unique<AdaptivePatchMerging>(s, "merge", C, cfg_.sequence_length());
    }
    head_ = Linear::create(s, "head", C, cfg_.num_classes);
}

Tensor Model::embed(const Tensor& images) const { return (*embedding_)(images).tokens; }

Tensor Model::positional_table() const {
    if (!cfg_.positional) return {};
    return pos_class_.defined() ? ops::concat({pos_class_, pos_patches_}, 0) : pos_patches_;
}

ModelOutput Model::forward_tokens(const Tensor& patch_tokens, const ForwardContext& ctx) const {
    if (patch_tokens.rank() != 3 || patch_tokens.size(1) != cfg_.patch_tokens() ||
        patch_tokens.size(2) != cfg_.channels) {
        throw DimensionError("expected patch tokens [B," + std::to_string(cfg_.patch_tokens()) + "," +
                             std::to_string(cfg_.channels) + "], got " + shape_string(patch_tokens.shape()));
    }
    const bool cls = cfg_.merge == MergeMode::class_token;
    Tensor x = cls ? class_token_attach(patch_tokens, class_token_) : patch_tokens;
    x = add_positional(x, positional_table(), cfg_.positional);
    for (const auto& block : blocks_) x = block(x, ctx);
    x = norm_(x);

    ModelOutput out;
    switch (cfg_.merge) {
        case MergeMode::class_token: out.merge.feature = class_token_readout(x, true); break;
        case MergeMode::avg_pool: out.merge.feature = avg_pool_merge(x); break;
        case MergeMode::apm: out.merge = (*apm_)(x); break;
    }
    out.logits = head_(out.merge.feature);
    return out;
}

ModelOutput Model::forward(const Tensor& images, const ForwardContext& ctx) const {
    return forward_tokens(embed(images), ctx);
}

ModelOutput Model::forward(const Tensor& images, bool training) const {
    ForwardContext ctx;
    ctx.training = training;
    return forward(images, ctx);
}

ModelConfig with_channels(ModelConfig cfg, std::size_t channels) {
    cfg.channels = channels;
    for (auto& b : cfg.branches) {
        if (b.final_pool == FinalPool::none && !b.stage_channels.empty()) b.stage_channels.back() = channels;
    }
    return cfg;
}

namespace {

struct Fit {
    ModelConfig cfg;
    double error = 1e300;
};

double relative_gap(std::uint64_t macs, std::uint64_t target) {
    return std::abs(static_cast<double>(macs) - static_cast<double>(target)) / static_cast<double>(target);
}

Fit best_depth(const ModelConfig& cfg, std::uint64_t target, std::size_t max_depth) {
    Fit best;
    for (std::size_t d = 1; d <= max_depth; ++d) {
        ModelConfig c = cfg;
        c.depth = d;
        const double e = relative_gap(count_flops(c).total_macs, target);
        if (e < best.error) best = {c, e};
    }
    return best;
}

ModelConfig match_budget(const ModelConfig& cfg, std::uint64_t target, double tolerance) {
    const std::size_t max_depth = std::max<std::size_t>(16, 4 * cfg.depth);
    Fit fit = best_depth(cfg, target, max_depth);
    if (fit.error <= tolerance) return fit.cfg;
    std::vector<std::size_t> widths;
    for (std::size_t c = cfg.heads; c <= 4 * cfg.channels; c += cfg.heads) widths.push_back(c);
    std::stable_sort(widths.begin(), widths.end(), [&](std::size_t a, std::size_t b) {
        const auto da = a > cfg.channels ? a - cfg.channels : cfg.channels - a;
        const auto db = b > cfg.channels ? b - cfg.channels : cfg.channels - b;
        return da < db;
    });
    for (std::size_t c : widths) {
        ModelConfig resized = with_channels(cfg, c);
        try {
            resized.validate();
        } catch (const ConfigError&) {
            continue;
        }
        fit = best_depth(resized, target, max_depth);
        if (fit.error <= tolerance) return fit.cfg;
    }
    throw ConfigError("no depth/width within " + std::to_string(tolerance) + " of the base budget for " +
                      cfg.preset_name);
}

}  // namespace

std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
    base.validate();
    if (base.embedding != EmbeddingKind::irregular) throw ConfigError("ablation base must use the irregular embedding");
    const std::uint64_t target = count_flops(base).total_macs;
    std::vector<AblationVariant> out;
    for (EmbeddingKind e : {EmbeddingKind::naive, EmbeddingKind::conv, EmbeddingKind::irregular}) {
        for (MergeMode m : {MergeMode::class_token, MergeMode::avg_pool, MergeMode::apm}) {
            ModelConfig c = base;
            c.embedding = e;
            c.merge = m;
            if (e == EmbeddingKind::naive) {
                c.branches.clear();
                c.patch_size = 16;
            } else if (e == EmbeddingKind::conv) {
                c.branches = {conv_trunk(c.input_size, c.channels)};
            }
            const std::string label = std::string(to_string(e)) + "+" + std::string(to_string(m));
            c.preset_name = base.preset_name + ":" + label;
            out.push_back({label, match_budget(c, target, 0.15)});
        }
    }
    return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'V', 'I', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
public:
    Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    template <typename T>
    T get() {
        unsigned char bytes[sizeof(T)];
        read(bytes, sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
        return v;
    }
    void read(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("truncated checkpoint " + path_.string() + " at byte " + std::to_string(offset_));
        }
        offset_ += n;
    }
    std::uint64_t offset() const { return offset_; }

private:
    std::istream& in_;
    const std::filesystem::path& path_;
    std::uint64_t offset_ = 0;
};

}  // namespace

std::filesystem::path checkpoint_config_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".json");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const auto& params = model.store().parameters();
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, 0);
    put<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(out, d);
        for (double v : p.tensor.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());

    std::ofstream cfg(checkpoint_config_path(path));
    if (!cfg) throw IoError("cannot write " + checkpoint_config_path(path).string());
    cfg << to_json(model.config());
    if (!cfg) throw IoError("failed writing " + checkpoint_config_path(path).string());
}

std::vector<CheckpointRecord> read_checkpoint_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    Reader r(in, path);
    char magic[8];
    r.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + " is not a checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    std::vector<CheckpointRecord> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        CheckpointRecord rec;
        const auto len = r.get<std::uint32_t>();
        if (len > 4096) throw FormatError("implausible name length at byte " + std::to_string(r.offset()));
        rec.name.resize(len);
        r.read(rec.name.data(), len);
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError("implausible rank at byte " + std::to_string(r.offset()));
        for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(r.get<std::uint64_t>());
        rec.values.resize(shape_numel(rec.shape));
        for (double& v : rec.values) v = std::bit_cast<double>(r.get<std::uint64_t>());
        records.push_back(std::move(rec));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after checkpoint records at byte " + std::to_string(r.offset()));
    }
    return records;
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream cfg_in(checkpoint_config_path(path));
    if (!cfg_in) throw IoError("missing checkpoint config " + checkpoint_config_path(path).string());
    std::stringstream text;
    text << cfg_in.rdbuf();
    Model model(model_config_from_json(text.str()), 0);

    auto records = read_checkpoint_records(path);
    auto& params = model.store().parameters();
    if (records.size() != params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(records.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    }
    std::map<std::string, CheckpointRecord*> by_name;
    for (auto& rec : records) by_name[rec.name] = &rec;
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks parameter " + p.name);
        if (it->second->shape != p.tensor.shape()) {
            throw FormatError("shape mismatch for " + p.name + ": " + shape_string(it->second->shape) + " vs " +
                              shape_string(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_values();
        std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
    }
    return model;
}

}  // namespace mvit
