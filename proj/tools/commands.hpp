#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "mvit/config.hpp"
#include "mvit/train.hpp"

namespace mvit::cli {

// Stable process exit codes.
enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kIoError = 3, kNumericalAbort = 4 };

struct ModelChoice {
    std::string preset;
    std::filesystem::path config_path;

    /// Resolves the preset or parses the config file; exactly one must be set.
    ModelConfig resolve() const;
};

struct DataSpec {
    std::string source = "synthetic:two_gaussians";  // synthetic:<kind> | cifar10:<dir>
    std::size_t train_size = 512;
    std::size_t val_size = 128;
    std::size_t classes = 0;  // synthetic only; 0 picks the kind's natural count
    std::uint64_t data_seed = 0;
};

struct LoadedData {
    Dataset train, val;
    bool flip_safe = true;  // false when horizontal flips change labels
};

LoadedData load_data(const DataSpec& spec, std::size_t image_size);

struct CommonArgs {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;  // resolved: flag, then MVIT_OUTPUT_DIR, then ./mvit-out
};

int cmd_describe(const ModelChoice& model, std::ostream& out);

struct FlopsArgs {
    std::string format = "table";
    bool curve = false;
};
int cmd_flops(const ModelChoice& model, const FlopsArgs& args, std::ostream& out);

struct GradcheckArgs {
    std::string preset = "desk-32";
    std::string ops = "all";
    std::size_t seeds = 3;
    bool corrupt_backward = false;
};
int cmd_gradcheck(const GradcheckArgs& args, const CommonArgs& common, std::ostream& out);

struct TrainArgs {
    ModelChoice model;
    DataSpec data;
    TrainConfig train;
    std::string augment = "auto";  // on | off | auto (off when flips change labels)
    std::filesystem::path manifest;  // rerun from a manifest instead of the flags above
};
int cmd_train(TrainArgs args, const CommonArgs& common, std::ostream& out);

struct EvalArgs {
    ModelChoice model;               // used when no checkpoint is given
    std::filesystem::path checkpoint;
    DataSpec data;
    std::size_t batch = 64;
};
int cmd_eval(const EvalArgs& args, const CommonArgs& common, std::ostream& out);

struct VisualizeArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path image_dir;
    std::size_t upscale = 1;
};
int cmd_visualize(const VisualizeArgs& args, const CommonArgs& common, std::ostream& out);

}  // namespace mvit::cli
