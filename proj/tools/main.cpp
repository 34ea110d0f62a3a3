#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "mvit/errors.hpp"

namespace {

using namespace mvit;
using namespace mvit::cli;

void add_model_flags(CLI::App* app, ModelChoice& m) {
    app->add_option("--preset", m.preset, "model preset (880M, 610M, 310M, desk-32, desk-64, ...)");
    app->add_option("--config", m.config_path, "model config JSON file");
}

void add_data_flags(CLI::App* app, DataSpec& d) {
    app->add_option("--data", d.source, "synthetic:<two_gaussians|grid_patterns|centered> or cifar10:<dir>")
        ->capture_default_str();
    app->add_option("--train-size", d.train_size, "training images (0 = all for cifar10)")->capture_default_str();
    app->add_option("--val-size", d.val_size, "validation images (0 = all for cifar10)")->capture_default_str();
    app->add_option("--classes", d.classes, "synthetic class count (0 = natural for the kind)");
    app->add_option("--data-seed", d.data_seed, "synthetic data seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mvit: mobile vision transformer toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string output_dir;
    app.add_option("--seed", common.seed, "master seed")->capture_default_str();
    app.add_option("--output-dir", output_dir, "artifact directory (default $MVIT_OUTPUT_DIR or ./mvit-out)");

    ModelChoice describe_model;
    auto* describe = app.add_subcommand("describe", "print architecture, token layout, params and MACs");
    add_model_flags(describe, describe_model);

    ModelChoice flops_model;
    FlopsArgs flops_args;
    auto* flops = app.add_subcommand("flops", "per-module MAC and parameter breakdown");
    add_model_flags(flops, flops_model);
    flops->add_option("--format", flops_args.format, "table or structured")->capture_default_str();
    flops->add_flag("--curve", flops_args.curve, "append the compression curve over the 880M/610M/310M presets");

    GradcheckArgs grad_args;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
    grad->add_option("--preset", grad_args.preset, "desk preset for the model target")->capture_default_str();
    grad->add_option("--ops", grad_args.ops, "all, or a comma list of targets")->capture_default_str();
    grad->add_option("--seeds", grad_args.seeds, "seeds per target (seed+1 .. seed+n)")->capture_default_str();
    grad->add_flag("--corrupt-backward", grad_args.corrupt_backward, "negative control: scale each backward by 1.01");

    TrainArgs train_args;
    auto* trn = app.add_subcommand("train", "train a model and write history.jsonl, best.ckpt, last.ckpt");
    add_model_flags(trn, train_args.model);
    add_data_flags(trn, train_args.data);
    auto& tc = train_args.train;
    trn->add_option("--epochs", tc.epochs)->capture_default_str();
    trn->add_option("--batch", tc.batch)->capture_default_str();
    trn->add_option("--lr", tc.lr)->capture_default_str();
    trn->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
    trn->add_option("--warmup-epochs", tc.warmup_epochs)->capture_default_str();
    trn->add_option("--label-smoothing", tc.label_smoothing)->capture_default_str();
    trn->add_option("--mixup", tc.mixup_alpha, "mixup alpha (0 disables)")->capture_default_str();
    trn->add_option("--cutmix", tc.cutmix_alpha, "cutmix alpha (0 disables)")->capture_default_str();
    trn->add_option("--accum-steps", tc.accum_steps)->capture_default_str();
    trn->add_flag("--autoscale", tc.autoscale, "scale lr by batch*world/1024");
    trn->add_option("--augment", train_args.augment, "on, off or auto")->capture_default_str();
    trn->add_option("--manifest", train_args.manifest, "rerun exactly from a previous manifest.json");

    EvalArgs eval_args;
    auto* evl = app.add_subcommand("eval", "top-1 accuracy of a checkpoint or a freshly seeded model");
    add_model_flags(evl, eval_args.model);
    add_data_flags(evl, eval_args.data);
    evl->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
    evl->add_option("--batch", eval_args.batch)->capture_default_str();

    VisualizeArgs vis_args;
    auto* vis = app.add_subcommand("visualize", "export per-branch merge-weight grids as PGM images");
    vis->add_option("--checkpoint", vis_args.checkpoint, "checkpoint of an apm model")->required();
    vis->add_option("--images", vis_args.image_dir, "directory of .ppm/.pgm images")->required();
    vis->add_option("--upscale", vis_args.upscale, "nearest-neighbour upscale factor")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (!output_dir.empty()) {
        common.output_dir = output_dir;
    } else if (const char* env = std::getenv("MVIT_OUTPUT_DIR"); env && *env) {
        common.output_dir = env;
    } else {
        common.output_dir = "mvit-out";
    }

    try {
        if (*describe) return cmd_describe(describe_model, std::cout);
        if (*flops) return cmd_flops(flops_model, flops_args, std::cout);
        if (*grad) return cmd_gradcheck(grad_args, common, std::cout);
        if (*trn) return cmd_train(train_args, common, std::cout);
        if (*evl) return cmd_eval(eval_args, common, std::cout);
        if (*vis) return cmd_visualize(vis_args, common, std::cout);
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kNumericalAbort;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kNumericalAbort;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IndexError& e) {
        std::cerr << "index error: " << e.what() << "\n";
        return kConfigError;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kIoError;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoError;
    }
    return kConfigError;
}
