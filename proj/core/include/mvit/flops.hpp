#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvit/config.hpp"

namespace mvit {

struct LayerCost {
    std::string name;
    std::uint64_t macs = 0;
    std::uint64_t params = 0;

    bool operator==(const LayerCost&) const = default;
};

/// Multiply-accumulate and parameter counts for one image. Nonlinearities, normalization,
/// pooling sums and the squeeze-excitation channel scale are not counted.
struct FlopsReport {
    std::string preset;
    std::vector<LayerCost> per_layer;
    std::uint64_t total_macs = 0;
    std::uint64_t total_params = 0;

    bool operator==(const FlopsReport&) const = default;
};

FlopsReport count_flops(const ModelConfig& cfg);

/// MACs of one transformer block over `tokens` tokens.
std::uint64_t block_macs(std::size_t tokens, std::size_t channels, std::size_t mlp_ratio);

struct CurveRow {
    std::string preset;
    std::uint64_t macs = 0;
    std::uint64_t params = 0;
};

/// Rows sorted by MACs, largest first. Duplicates are kept.
std::vector<CurveRow> compression_curve(const std::vector<ModelConfig>& cfgs);
std::string render_curve(const std::vector<CurveRow>& rows);

std::string render_table(const FlopsReport& report);
std::string to_json(const FlopsReport& report);
FlopsReport flops_report_from_json(const std::string& text);

}  // namespace mvit
