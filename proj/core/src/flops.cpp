#include "mvit/flops.hpp"

#include <algorithm>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mvit/errors.hpp"

namespace mvit {

using nlohmann::json;

namespace {

using u64 = std::uint64_t;

class Tally {
public:
    void add(std::string name, u64 macs, u64 params) { layers_.push_back({std::move(name), macs, params}); }
    // Linear over `rows` vectors.
    void linear(const std::string& name, u64 rows, u64 in, u64 out, bool bias = true) {
        add(name, rows * in * out, in * out + (bias ? out : 0));
    }
    void conv(const std::string& name, u64 in, u64 out, u64 k, u64 groups, u64 out_h, u64 out_w) {
        add(name, out * (in / groups) * k * k * out_h * out_w, out * (in / groups) * k * k + out);
    }
    std::vector<LayerCost> take() { return std::move(layers_); }

private:
    std::vector<LayerCost> layers_;
};

void count_branch(Tally& t, const std::string& name, const BranchSpec& spec, std::size_t input, std::size_t channels) {
    const auto& ch = spec.stage_channels;
    const auto& st = spec.stage_strides;
    std::size_t extent = stage_output_extent(input, st[0]);
    t.conv(name + ".stem", 3, ch[0], 3, 1, extent, extent);
    for (std::size_t i = 1; i < ch.size(); ++i) {
        const std::string stage = name + ".stage" + std::to_string(i);
        const std::size_t hidden = ch[i - 1] * spec.expansion;
        t.conv(stage + ".expand", ch[i - 1], hidden, 1, 1, extent, extent);
        const std::size_t next = stage_output_extent(extent, st[i]);
        t.conv(stage + ".depthwise", hidden, hidden, depthwise_kernel(st[i]), hidden, next, next);
        const std::size_t squeezed = std::max<std::size_t>(1, hidden / spec.se_reduction);
        t.linear(stage + ".se.reduce", 1, hidden, squeezed);
        t.linear(stage + ".se.expand", 1, squeezed, hidden);
        t.conv(stage + ".project", hidden, ch[i], 1, 1, next, next);
        extent = next;
    }
    if (spec.final_pool == FinalPool::global_avg) t.linear(name + ".pool_proj", 1, ch.back(), channels);
}

}  // namespace

u64 block_macs(std::size_t tokens, std::size_t channels, std::size_t mlp_ratio) {
    const u64 N = tokens, C = channels, R = mlp_ratio;
    return N * C * 3 * C + 2 * N * N * C + N * C * C + 2 * N * C * R * C;
}

FlopsReport count_flops(const ModelConfig& cfg) {
    cfg.validate();
    Tally t;
    const std::size_t C = cfg.channels;
    if (cfg.embedding == EmbeddingKind::naive) {
        const std::size_t p = cfg.patch_size;
        t.linear("embed.proj", cfg.patch_tokens(), 3 * p * p, C);
    } else {
        for (std::size_t i = 0; i < cfg.branches.size(); ++i) {
            count_branch(t, "embed.branch" + std::to_string(i), cfg.branches[i], cfg.input_size, C);
        }
    }
    const bool cls = cfg.merge == MergeMode::class_token;
    const std::size_t N = cfg.sequence_length();
    if (cls) t.add("cls_token", 0, C);
    if (cfg.positional) {
        t.add("pos_embed.patches", 0, cfg.patch_tokens() * C);
        if (cls) t.add("pos_embed.cls", 0, C);
    }
    const std::size_t hidden = C * cfg.mlp_ratio;
    for (std::size_t d = 0; d < cfg.depth; ++d) {
        const std::string b = "blocks." + std::to_string(d);
        t.add(b + ".norm1", 0, 2 * C);
        t.linear(b + ".attn.qkv", N, C, 3 * C);
        t.add(b + ".attn.scores", static_cast<u64>(N) * N * C, 0);
        t.add(b + ".attn.mix", static_cast<u64>(N) * N * C, 0);
        t.linear(b + ".attn.proj", N, C, C);
        t.add(b + ".norm2", 0, 2 * C);
        t.linear(b + ".ffn.fc1", N, C, hidden);
        t.linear(b + ".ffn.fc2", N, hidden, C);
    }
    t.add("norm", 0, 2 * C);
    if (cfg.merge == MergeMode::apm) {
        const std::size_t q = std::max<std::size_t>(1, C / 4);
        t.linear("merge.fc1", N, C, q);
        t.linear("merge.fc2", N, q, 1);
        t.add("merge.global_logits", 0, N);
        t.add("merge.weighted_sum", static_cast<u64>(N) * C, 0);
    }
    t.linear("head", 1, C, cfg.num_classes);

    FlopsReport r;
    r.preset = cfg.preset_name;
    r.per_layer = t.take();
    for (const auto& l : r.per_layer) {
        r.total_macs += l.macs;
        r.total_params += l.params;
    }
    return r;
}

std::vector<CurveRow> compression_curve(const std::vector<ModelConfig>& cfgs) {
    std::vector<CurveRow> rows;
    for (const auto& c : cfgs) {
        const FlopsReport r = count_flops(c);
        rows.push_back({c.preset_name, r.total_macs, r.total_params});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) { return a.macs > b.macs; });
    return rows;
}

std::string render_curve(const std::vector<CurveRow>& rows) {
    std::ostringstream out;
    if (rows.empty()) return "";
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, r.preset.size());
    out << std::left << std::setw(static_cast<int>(w)) << "preset" << std::right << std::setw(16) << "macs"
        << std::setw(14) << "params" << '\n';
    for (const auto& r : rows) {
        out << std::left << std::setw(static_cast<int>(w)) << r.preset << std::right << std::setw(16) << r.macs
            << std::setw(14) << r.params << '\n';
    }
    return out.str();
}

std::string render_table(const FlopsReport& report) {
    std::size_t w = 5;
    for (const auto& l : report.per_layer) w = std::max(w, l.name.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(w)) << "layer" << std::right << std::setw(16) << "macs"
        << std::setw(14) << "params" << '\n';
    for (const auto& l : report.per_layer) {
        out << std::left << std::setw(static_cast<int>(w)) << l.name << std::right << std::setw(16) << l.macs
            << std::setw(14) << l.params << '\n';
    }
    out << std::left << std::setw(static_cast<int>(w)) << "total" << std::right << std::setw(16) << report.total_macs
        << std::setw(14) << report.total_params << '\n';
    return out.str();
}

std::string to_json(const FlopsReport& report) {
    json layers = json::array();
    for (const auto& l : report.per_layer) layers.push_back({{"name", l.name}, {"macs", l.macs}, {"params", l.params}});
    json j{{"preset", report.preset},
           {"per_layer", layers},
           {"total_macs", report.total_macs},
           {"total_params", report.total_params}};
    return j.dump(2) + "\n";
}

FlopsReport flops_report_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        FlopsReport r;
        r.preset = j.at("preset").get<std::string>();
        for (const auto& l : j.at("per_layer")) {
            r.per_layer.push_back({l.at("name").get<std::string>(), l.at("macs").get<u64>(), l.at("params").get<u64>()});
        }
        r.total_macs = j.at("total_macs").get<u64>();
        r.total_params = j.at("total_params").get<u64>();
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed flops report: ") + e.what());
    }
}

}  // namespace mvit
