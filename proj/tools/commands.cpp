#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvit/data.hpp"
#include "mvit/errors.hpp"
#include "mvit/flops.hpp"
#include "mvit/gradcheck_suite.hpp"
#include "mvit/model.hpp"
#include "mvit/pgm.hpp"

namespace mvit::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("failed writing " + p.string());
}

json data_json(const DataSpec& d) {
    return json{{"source", d.source},
                {"train_size", d.train_size},
                {"val_size", d.val_size},
                {"classes", d.classes},
                {"data_seed", d.data_seed}};
}

DataSpec data_from_json(const json& j) {
    DataSpec d;
    try {
        d.source = j.at("source").get<std::string>();
        d.train_size = j.at("train_size").get<std::size_t>();
        d.val_size = j.at("val_size").get<std::size_t>();
        d.classes = j.at("classes").get<std::size_t>();
        d.data_seed = j.at("data_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest data section: ") + e.what());
    }
    return d;
}

// Written before any compute so an interrupted run still records what was asked for.
void write_manifest(const CommonArgs& common, const std::string& subcommand, const fs::path& config_path,
                    const json& extra) {
    fs::create_directories(common.output_dir);
    json j{{"subcommand", subcommand},
           {"seed", common.seed},
           {"output_dir", common.output_dir.string()},
           {"config_path", config_path.string()}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_text(common.output_dir / "manifest.json", j.dump(2) + "\n");
}

std::string layout_string(const ModelConfig& cfg) {
    if (cfg.embedding != EmbeddingKind::irregular) return std::to_string(cfg.patch_tokens());
    std::string s;
    for (const auto& b : cfg.branches) s += (s.empty() ? "" : "+") + std::to_string(b.tokens());
    return s;
}

std::string format_error(double e) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << e;
    return os.str();
}

}  // namespace

ModelConfig ModelChoice::resolve() const {
    if (!preset.empty() && !config_path.empty()) throw ConfigError("give either --preset or --config, not both");
    if (!config_path.empty()) return model_config_from_json(read_text(config_path));
    if (preset.empty()) throw ConfigError("a model is required: --preset NAME or --config FILE");
    return model_preset(preset);
}

LoadedData load_data(const DataSpec& spec, std::size_t image_size) {
    const auto colon = spec.source.find(':');
    if (colon == std::string::npos) throw ConfigError("--data must be synthetic:<kind> or cifar10:<dir>");
    const std::string scheme = spec.source.substr(0, colon), rest = spec.source.substr(colon + 1);
    LoadedData out;
    if (scheme == "cifar10") {
        if (!fs::is_directory(rest)) throw IoError("CIFAR-10 directory not found: " + rest);
        out.train = load_cifar10(rest, CifarSplit::train, spec.train_size);
        out.val = load_cifar10(rest, CifarSplit::test, spec.val_size);
        return out;
    }
    if (scheme != "synthetic") throw ConfigError("unknown data source '" + scheme + "' (synthetic, cifar10)");
    const SyntheticKind kind = synthetic_kind_from_string(rest);
    std::size_t K = spec.classes;
    if (K == 0) K = kind == SyntheticKind::two_gaussians ? 2 : 4;
    const Dataset all = synthetic_set(kind, spec.train_size + spec.val_size, image_size, K, spec.data_seed);
    out.train = all.head(spec.train_size);
    out.val.num_classes = K;
    out.val.images.assign(all.images.begin() + static_cast<std::ptrdiff_t>(spec.train_size), all.images.end());
    out.flip_safe = kind != SyntheticKind::grid_patterns;
    return out;
}

int cmd_describe(const ModelChoice& model, std::ostream& out) {
    const ModelConfig cfg = model.resolve();
    cfg.validate();
    const FlopsReport flops = count_flops(cfg);
    out << "preset=" << cfg.preset_name << "\n"
        << "channel=" << cfg.channels << " depth=" << cfg.depth << " heads=" << cfg.heads
        << " mlp_ratio=" << cfg.mlp_ratio << "\n"
        << "input=" << cfg.input_size << " embedding=" << to_string(cfg.embedding) << " tokens=" << cfg.patch_tokens()
        << " layout=" << layout_string(cfg) << " sequence=" << cfg.sequence_length() << "\n"
        << "merge=" << to_string(cfg.merge) << " positional=" << (cfg.positional ? "on" : "off")
        << " classes=" << cfg.num_classes << "\n"
        << "params=" << flops.total_params << " macs=" << flops.total_macs << "\n";
    return kOk;
}

int cmd_flops(const ModelChoice& model, const FlopsArgs& args, std::ostream& out) {
    if (args.format != "table" && args.format != "structured") {
        throw ConfigError("--format must be table or structured");
    }
    const ModelConfig cfg = model.resolve();
    const FlopsReport report = count_flops(cfg);
    if (args.format == "structured") {
        out << to_json(report) << "\n";
    } else {
        out << render_table(report);
    }
    if (args.curve) {
        std::vector<ModelConfig> cfgs{cfg};
        for (const char* name : {"880M", "610M", "310M"})
            if (cfg.preset_name != name) cfgs.push_back(model_preset(name));
        out << "\n" << render_curve(compression_curve(cfgs));
    }
    return kOk;
}

int cmd_gradcheck(const GradcheckArgs& args, const CommonArgs& common, std::ostream& out) {
    if (args.preset.rfind("desk-", 0) != 0) {
        throw ConfigError("gradcheck is limited to desk presets (got '" + args.preset + "')");
    }
    model_preset(args.preset);
    std::vector<std::string> targets;
    if (args.ops == "all") {
        targets = gradcheck_targets();
    } else {
        std::stringstream ss(args.ops);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto known = gradcheck_targets();
            if (std::find(known.begin(), known.end(), item) == known.end()) {
                std::string list;
                for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
                throw ConfigError("unknown op '" + item + "' (known: " + list + ")");
            }
            targets.push_back(item);
        }
    }
    if (args.seeds == 0) throw ConfigError("--seeds must be positive");
    write_manifest(common, "gradcheck", {},
                   json{{"preset", args.preset},
                        {"ops", targets},
                        {"seeds", args.seeds},
                        {"corrupt_backward", args.corrupt_backward}});

    SuiteOptions options;
    options.preset = args.preset;
    options.corrupt_backward = args.corrupt_backward;
    bool all_pass = true;
    std::ostringstream report;
    for (const auto& name : targets) {
        double worst = 0.0;
        std::size_t probes = 0, refined = 0;
        bool pass = true;
        for (std::size_t k = 0; k < args.seeds; ++k) {
            const TargetResult r = run_gradcheck_target(name, common.seed + 1 + k, options);
            worst = std::max(worst, r.report.max_relative_error);
            probes += r.report.probes;
            refined += r.report.refined;
            pass = pass && r.passed;
        }
        all_pass = all_pass && pass;
        report << std::left << std::setw(18) << name << " seeds=" << args.seeds << " probes=" << probes
               << " refined=" << refined << " max_rel_err=" << format_error(worst) << " " << (pass ? "PASS" : "FAIL")
               << "\n";
    }
    out << report.str();
    write_text(common.output_dir / "gradcheck.txt", report.str());
    return all_pass ? kOk : kCheckFailed;
}

int cmd_train(TrainArgs args, const CommonArgs& common, std::ostream& out) {
    ModelConfig model_cfg;
    fs::path config_path = args.model.config_path;
    CommonArgs run = common;
    if (!args.manifest.empty()) {
        json m;
        try {
            m = json::parse(read_text(args.manifest));
            if (m.at("subcommand").get<std::string>() != "train") throw ConfigError("manifest is not from a train run");
            model_cfg = model_config_from_json(m.at("model_config").dump());
            args.train = train_config_from_json(m.at("train_config").dump());
            args.data = data_from_json(m.at("data"));
            run.seed = m.at("seed").get<std::uint64_t>();
            config_path = m.at("config_path").get<std::string>();
        } catch (const json::exception& e) {
            throw ConfigError("malformed manifest " + args.manifest.string() + ": " + e.what());
        }
    } else {
        model_cfg = args.model.resolve();
        args.train.seed = common.seed;
    }
    LoadedData data = load_data(args.data, model_cfg.input_size);
    if (args.model.config_path.empty() && args.manifest.empty()) {
        model_cfg.num_classes = data.train.num_classes;
    } else if (model_cfg.num_classes != data.train.num_classes) {
        throw ConfigError("model has " + std::to_string(model_cfg.num_classes) + " classes, data has " +
                          std::to_string(data.train.num_classes));
    }
    if (args.manifest.empty()) {
        if (args.augment == "auto") {
            args.train.augment = data.flip_safe;
        } else if (args.augment == "on" || args.augment == "off") {
            args.train.augment = args.augment == "on";
        } else {
            throw ConfigError("--augment must be on, off or auto");
        }
    }
    model_cfg.validate();
    args.train.validate();
    write_manifest(run, "train", config_path,
                   json{{"model_config", json::parse(to_json(model_cfg))},
                        {"train_config", json::parse(to_json(args.train))},
                        {"data", data_json(args.data)}});

    Model model(model_cfg, run.seed);
    TrainOptions options;
    options.out_dir = run.output_dir;
    const auto history = train(model, data.train, data.val, args.train, options);
    for (const auto& r : history) out << to_jsonl(r) << "\n";
    if (!history.empty()) {
        double best = 0.0;
        for (const auto& r : history) best = std::max(best, r.val_accuracy);
        out << "final val_accuracy=" << history.back().val_accuracy << " best=" << best << "\n";
    }
    return kOk;
}

int cmd_eval(const EvalArgs& args, const CommonArgs& common, std::ostream& out) {
    std::optional<Model> model;
    ModelConfig cfg;
    if (!args.checkpoint.empty()) {
        if (!fs::exists(args.checkpoint)) throw IoError("checkpoint not found: " + args.checkpoint.string());
        cfg = model_config_from_json(read_text(checkpoint_config_path(args.checkpoint)));
    } else {
        cfg = args.model.resolve();
    }
    const LoadedData data = load_data(args.data, cfg.input_size);
    if (args.checkpoint.empty() && args.model.config_path.empty()) cfg.num_classes = data.val.num_classes;
    write_manifest(common, "eval", args.model.config_path,
                   json{{"checkpoint", args.checkpoint.string()},
                        {"model_config", json::parse(to_json(cfg))},
                        {"data", data_json(args.data)}});
    if (!args.checkpoint.empty()) {
        model.emplace(load_checkpoint(args.checkpoint));
    } else {
        model.emplace(cfg, common.seed);
    }
    if (model->config().num_classes < data.val.num_classes) {
        throw ConfigError("model has fewer classes than the evaluation data");
    }
    const double acc = evaluate_accuracy(*model, data.val, args.batch);
    out << "top1=" << acc << " n=" << data.val.size() << "\n";
    write_text(common.output_dir / "eval.json",
               json{{"top1", acc}, {"n", data.val.size()}}.dump(2) + "\n");
    return kOk;
}

int cmd_visualize(const VisualizeArgs& args, const CommonArgs& common, std::ostream& out) {
    if (!fs::exists(args.checkpoint)) throw IoError("checkpoint not found: " + args.checkpoint.string());
    const ModelConfig cfg = model_config_from_json(read_text(checkpoint_config_path(args.checkpoint)));
    if (cfg.merge != MergeMode::apm) {
        throw ConfigError("checkpoint uses merge mode '" + std::string(to_string(cfg.merge)) +
                          "'; weight grids exist only for apm, which learns one weight per token");
    }
    if (!fs::is_directory(args.image_dir)) throw IoError("image directory not found: " + args.image_dir.string());
    if (args.upscale == 0) throw ConfigError("--upscale must be positive");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(args.image_dir)) {
        const auto ext = e.path().extension();
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    write_manifest(common, "visualize", {},
                   json{{"checkpoint", args.checkpoint.string()},
                        {"image_dir", args.image_dir.string()},
                        {"upscale", args.upscale},
                        {"model_config", json::parse(to_json(cfg))}});
    const Model model = load_checkpoint(args.checkpoint);
    const std::size_t S = cfg.input_size;
    std::size_t written = 0;
    for (const auto& f : files) {
        const RgbImage rgb = read_pnm(f);
        if (rgb.width != rgb.height) throw DimensionError(f.string() + " is not square");
        LabeledImage img;
        img.size = rgb.width;
        img.pixels.resize(3 * rgb.width * rgb.width);
        const std::size_t plane = rgb.width * rgb.width;
        for (std::size_t p = 0; p < plane; ++p)
            for (std::size_t c = 0; c < 3; ++c) img.pixels[c * plane + p] = rgb.pixels[3 * p + c] / 255.0f;
        const std::vector<double> x = preprocess(img, S, false, nullptr);
        NoGradGuard no_grad;
        const ModelOutput y = model.forward(Tensor::from({1, 3, S, S}, x), false);
        const auto paths = export_weight_grids(common.output_dir, f.stem().string(), y.merge.per_image.at(0),
                                               model.provenance(), args.upscale);
        written += paths.size();
    }
    out << "images=" << files.size() << " grids=" << written << " dir=" << common.output_dir.string() << "\n";
    return kOk;
}

}  // namespace mvit::cli
