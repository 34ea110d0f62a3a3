// Acceptance runner: one line per criterion, exit 0 only when every criterion passes.
// Criterion 8's CIFAR half needs CIFAR10_DIR; without it the line reads UNVERIFIED and the exit
// code is 0 only under --allow-unverified.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "../support/fixtures.hpp"
#include "../unit/test_util.hpp"
#include "mvit/data.hpp"
#include "mvit/flops.hpp"
#include "mvit/gradcheck_suite.hpp"
#include "mvit/model.hpp"
#include "mvit/patch_embedding.hpp"
#include "mvit/patch_merging.hpp"
#include "mvit/train.hpp"

namespace {

using namespace mvit;
using namespace mvit::fixtures;
using namespace mvit::testing;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

enum class Status { pass, fail, unverified };

struct Outcome {
    Status status = Status::pass;
    std::string detail;
};

// Collects failed checks; the first few become the criterion's detail line.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok) failures_.push_back(what);
    }
    void note(const std::string& s) { notes_.push_back(s); }
    Outcome outcome() const {
        Outcome o;
        o.status = failures_.empty() ? Status::pass : Status::fail;
        std::vector<std::string> parts = failures_.empty() ? notes_ : failures_;
        if (parts.size() > 4) parts.resize(4);
        for (const auto& p : parts) o.detail += (o.detail.empty() ? "" : "; ") + p;
        return o;
    }

private:
    std::vector<std::string> failures_, notes_;
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path g_cli;
fs::path g_scratch;

RunResult cli(const std::string& args, const std::string& tag) { return run_cli(g_cli, args, g_scratch / "io" / tag); }

std::string outdir(const std::string& name) { return "--output-dir '" + (g_scratch / name).string() + "' "; }

Outcome flops_audit() {
    Checks c;
    const std::vector<std::pair<std::string, double>> table{{"880M", 880e6}, {"610M", 610e6}, {"310M", 310e6}};
    std::vector<std::uint64_t> totals;
    const auto t0 = Clock::now();
    for (const auto& [name, target] : table) {
        const auto r = cli("flops --preset " + name + " --format structured", "flops-" + name);
        c.expect(r.code == 0, name + " exit " + std::to_string(r.code));
        if (r.code != 0) return c.outcome();
        const std::uint64_t macs = flops_report_from_json(r.out).total_macs;
        totals.push_back(macs);
        const double dev = (static_cast<double>(macs) - target) / target;
        c.expect(std::abs(dev) <= 0.15, name + " off by " + fmt(100 * dev) + "%");
        c.note(name + "=" + fmt(static_cast<double>(macs) / 1e6, 4) + "M (" + (dev >= 0 ? "+" : "") + fmt(100 * dev, 2) +
               "%)");
    }
    const double elapsed = seconds_since(t0);
    c.expect(totals[0] > totals[1] && totals[1] > totals[2], "not strictly monotone");
    c.expect(elapsed < 1.0, "took " + fmt(elapsed) + " s");
    c.note(fmt(elapsed, 2) + " s for all three");
    return c.outcome();
}

Outcome token_layout() {
    Checks c;
    for (const char* name : {"880M", "610M", "310M"}) {
        const ModelConfig cfg = model_preset(name);
        ParameterStore store(1);
        const auto embed = make_patch_embedding(store, cfg);
        const TokenSet t = (*embed)(Tensor::full({1, 3, 224, 224}, 0.5));
        std::vector<std::size_t> per_branch(3, 0);
        for (const auto& o : t.provenance) {
            if (o.branch < 3) ++per_branch[o.branch];
        }
        c.expect(t.tokens.shape() == Shape{1, 66, cfg.channels}, std::string(name) + " token tensor " +
                                                                    shape_string(t.tokens.shape()));
        c.expect(per_branch == std::vector<std::size_t>{49, 16, 1} && t.provenance.size() == 66,
                 std::string(name) + " partition is not 49+16+1");
    }
    for (const auto& [name, n] : std::vector<std::pair<std::string, std::size_t>>{{"desk-64", 21}, {"desk-32", 5}}) {
        const ModelConfig cfg = model_preset(name);
        ParameterStore store(1);
        const auto embed = make_patch_embedding(store, cfg);
        const TokenSet t = (*embed)(Tensor::full({2, 3, cfg.input_size, cfg.input_size}, 0.5));
        std::size_t declared = 0;
        for (const auto& b : cfg.branches) declared += b.tokens();
        c.expect(declared == n && t.tokens.size(1) == n && t.provenance.size() == n,
                 name + " emitted " + std::to_string(t.tokens.size(1)) + " tokens");
    }
    c.note("880M/610M/310M emit 49+16+1=66; desk-64 emits 21, desk-32 emits 5");
    return c.outcome();
}

Outcome gradient_suite() {
    Checks c;
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    for (const auto& name : gradcheck_targets()) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const TargetResult r = run_gradcheck_target(name, seed);
            ++checks;
            c.expect(r.passed, name + " seed " + std::to_string(seed) + " rel err " + fmt(r.report.max_relative_error));
            if (r.report.max_relative_error > worst) worst = r.report.max_relative_error, worst_name = name;
        }
    }
    const double elapsed = seconds_since(t0);
    c.expect(elapsed < 120.0, "took " + fmt(elapsed) + " s");
    c.note(std::to_string(gradcheck_targets().size()) + " targets x 3 seeds, worst " + fmt(worst) + " (" + worst_name +
           "), " + fmt(elapsed, 2) + " s");
    return c.outcome();
}

Outcome apm_invariants() {
    Checks c;
    double worst_sum = 0.0, worst_avg = 0.0, worst_perm = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ParameterStore store(seed);
        AdaptivePatchMerging apm(store, "merge", 16, 21);
        randomize_parameters(store, seed, 2.0);
        const Tensor x = random_tensor({4, 21, 16}, seed + 10, -3, 3, false);
        const MergeResult r = apm(x);
        for (const auto& mw : r.per_image) {
            const double sum = std::accumulate(mw.weights.begin(), mw.weights.end(), 0.0);
            worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            c.expect(std::ranges::all_of(mw.weights, [](double w) { return w >= 0.0; }), "negative weight");
        }
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto perm = random_permutation(21, 50 * seed + s);
            std::vector<double> g(21);
            for (std::size_t i = 0; i < 21; ++i) g[i] = apm.global_logits().values()[perm[i]];
            const MergeResult p = apm_forward(permute_tokens(x, perm), apm.fc1(), apm.fc2(), Tensor::from({21}, g));
            worst_perm = std::max(worst_perm, max_abs_diff(p.feature, r.feature));
        }
        fill(apm.fc2().weight, 0.0);
        fill(apm.fc2().bias, 0.0);
        fill(apm.global_logits(), 0.0);
        worst_avg = std::max(worst_avg, max_abs_diff(apm(x).feature, avg_pool_merge(x)));
    }
    c.expect(worst_sum <= 1e-9, "weight sum off by " + fmt(worst_sum));
    c.expect(worst_avg <= 1e-12, "uniform gates differ from average pooling by " + fmt(worst_avg));
    c.expect(worst_perm <= 1e-9, "joint permutation moved the feature by " + fmt(worst_perm));
    c.note("|sum-1| " + fmt(worst_sum) + ", uniform vs avg " + fmt(worst_avg) + ", permutation " + fmt(worst_perm));
    return c.outcome();
}

// Global logits are indexed by token position, so on trained parameters they travel with the
// tokens; at initialization they are all zero and the literal statement applies.
void permute_global_logits(Model& m, const std::vector<std::size_t>& perm, const std::vector<double>& original) {
    for (auto& p : m.store().parameters()) {
        if (p.name != "merge.global_logits") continue;
        auto v = p.tensor.mutable_values();
        for (std::size_t i = 0; i < perm.size(); ++i) v[i] = original[perm[i]];
    }
}

Outcome permutation_property() {
    Checks c;
    double at_init = 0.0, randomized = 0.0, with_pos = 0.0;
    for (const char* preset : {"desk-32", "desk-64"}) {
        for (MergeMode mode : {MergeMode::apm, MergeMode::avg_pool}) {
            ModelConfig cfg = model_preset(preset);
            cfg.merge = mode;
            cfg.positional = false;
            const std::size_t S = cfg.input_size;
            for (bool random_params : {false, true}) {
                Model m(cfg, 5);
                if (random_params) randomize_parameters(m.store(), 5);
                std::vector<double> logits0;
                if (const auto* apm = m.adaptive_merge()) {
                    logits0.assign(apm->global_logits().values().begin(), apm->global_logits().values().end());
                }
                const Tensor tokens = m.embed(random_tensor({2, 3, S, S}, 6, 0, 1, false));
                const Tensor base = m.forward_tokens(tokens, ForwardContext{}).logits;
                for (std::uint64_t s = 0; s < 5; ++s) {
                    const auto perm = random_permutation(tokens.size(1), 100 + s);
                    if (random_params && !logits0.empty()) permute_global_logits(m, perm, logits0);
                    const double d =
                        max_abs_diff(m.forward_tokens(permute_tokens(tokens, perm), ForwardContext{}).logits, base);
                    (random_params ? randomized : at_init) = std::max(random_params ? randomized : at_init, d);
                }
            }
        }
    }
    // Control: the same permutation with positions on must move the logits.
    ModelConfig cfg = model_preset("desk-64");
    cfg.merge = MergeMode::avg_pool;
    Model m(cfg, 5);
    randomize_parameters(m.store(), 5);
    const Tensor tokens = m.embed(random_tensor({2, 3, 64, 64}, 6, 0, 1, false));
    with_pos = max_abs_diff(m.forward_tokens(permute_tokens(tokens, random_permutation(21, 100)), ForwardContext{}).logits,
                            m.forward_tokens(tokens, ForwardContext{}).logits);
    c.expect(at_init <= 1e-9, "logits moved by " + fmt(at_init) + " at initialization");
    c.expect(randomized <= 1e-9, "logits moved by " + fmt(randomized) + " with random parameters");
    c.expect(with_pos > 1e-9, "positional control did not move the logits");
    c.note("max logit change " + fmt(at_init) + " at init, " + fmt(randomized) +
           " with random parameters (apm global logits permuted along), 5 permutations x {apm,avg_pool} x 2 desk "
           "presets; with positions " + fmt(with_pos));
    return c.outcome();
}

Outcome ablation_matrix() {
    Checks c;
    for (const char* preset : {"desk-32", "desk-64"}) {
        const auto variants = ablation_variants(model_preset(preset));
        c.expect(variants.size() == 9, std::string(preset) + " has " + std::to_string(variants.size()) + " variants");
        for (const auto& v : variants) {
            try {
                Model m(v.config, 1);
                const std::size_t S = v.config.input_size;
                ModelOutput out = m.forward(random_tensor({2, 3, S, S}, 1, 0, 1, false), true);
                weighted_sum(out.logits).backward();
                bool all_grads = true;
                for (const auto& p : m.store().parameters()) all_grads = all_grads && p.tensor.has_grad();
                c.expect(all_grads, v.label + " left parameters without gradient");
                const bool cls = v.config.merge == MergeMode::class_token;
                c.expect(v.config.sequence_length() == v.config.patch_tokens() + (cls ? 1 : 0),
                         v.label + " sequence length");
                if (v.config.positional) {
                    c.expect(m.positional_table().size(0) == v.config.sequence_length(), v.label + " positional rows");
                }
            } catch (const Error& e) {
                c.expect(false, std::string(preset) + " " + v.label + ": " + e.what());
            }
        }
    }
    std::size_t rows = 0;
    for (const auto& v : ablation_variants(model_preset("880M"))) {
        if (v.config.embedding != EmbeddingKind::irregular || v.config.merge != MergeMode::class_token) continue;
        Model m(v.config, 1);
        rows = m.positional_table().size(0);
    }
    c.expect(rows == 67, "full class-token table has " + std::to_string(rows) + " rows");
    c.note("9 variants per desk preset build, forward and backward; irregular+class_token at 224 carries 67 rows");
    return c.outcome();
}

Outcome optimizer_oracle() {
    Checks c;
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    std::vector<double> theta{1.0}, g{1.0};
    AdamMoments s;
    adamw_step(theta, g, s, 1, 0.1, cfg);
    const double hand = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    c.expect(std::abs(theta[0] - hand) <= 1e-7 && std::abs(theta[0] - 0.9) <= 1e-7,
             "theta=" + fmt(theta[0], 12) + " vs " + fmt(hand, 12));

    Rng rng = make_rng(17, "acceptance-adam");
    std::vector<double> a(32), b;
    for (double& x : a) x = 2 * uniform01(rng) - 1;
    b = a;
    AdamMoments sa;
    std::vector<double> m(b.size(), 0.0), v(b.size(), 0.0);
    double worst = 0.0;
    for (std::size_t t = 1; t <= 50; ++t) {
        std::vector<double> grad(a.size());
        for (double& x : grad) x = 4 * uniform01(rng) - 2;
        adamw_step(a, grad, sa, t, 1e-2, cfg);
        for (std::size_t i = 0; i < b.size(); ++i) {
            m[i] = 0.9 * m[i] + 0.1 * grad[i];
            v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
            const double mh = m[i] / (1 - std::pow(0.9, static_cast<double>(t)));
            const double vh = v[i] / (1 - std::pow(0.999, static_cast<double>(t)));
            b[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
        }
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    c.expect(worst <= 1e-15, "AdamW(wd=0) differs from Adam by " + fmt(worst));
    c.note("theta 1 -> " + fmt(theta[0], 10) + "; AdamW(wd=0) vs Adam max diff " + fmt(worst) + " over 50 steps");
    return c.outcome();
}

inline constexpr std::size_t kCifarTrain = 5000, kCifarEpochVal = 2000, kCifarEpochs = 20, kCifarBatch = 64;

// Projected wall time of the CIFAR run from timed training and evaluation batches.
double projected_cifar_seconds() {
    Model m(model_preset("desk-64"), 1);
    AdamW opt(m.store());
    const Tensor x = random_tensor({kCifarBatch, 3, 64, 64}, 3, -1, 1, false);
    auto step = [&] {
        m.store().zero_grad();
        ops::sum(m.forward(x, true).logits).backward();
        opt.step(m.store(), 1e-4, TrainConfig{});
    };
    step();
    const auto t0 = Clock::now();
    for (int i = 0; i < 3; ++i) step();
    const double t_step = seconds_since(t0) / 3.0;
    const auto t1 = Clock::now();
    {
        NoGradGuard guard;
        for (int i = 0; i < 3; ++i) m.forward(x, false);
    }
    const double t_eval = seconds_since(t1) / 3.0;
    auto batches = [](std::size_t n) { return static_cast<double>((n + kCifarBatch - 1) / kCifarBatch); };
    return t_step * batches(kCifarTrain) * kCifarEpochs +
           t_eval * (batches(kCifarEpochVal) * kCifarEpochs + batches(10000));
}

Outcome desk_training() {
    Checks c;
    const auto t0 = Clock::now();
    const auto r = cli("--seed 1 " + outdir("c8-desk32") +
                           "train --preset desk-32 --data synthetic:two_gaussians --epochs 5 --train-size 512 --val-size 128",
                       "c8-desk32");
    const double elapsed = seconds_since(t0);
    c.expect(r.code == 0, "desk-32 train exit " + std::to_string(r.code) + ": " + r.err);
    double best = 0.0;
    std::size_t epochs = 0, first_perfect = 0;
    std::istringstream hist(slurp(g_scratch / "c8-desk32" / "history.jsonl"));
    for (std::string line; std::getline(hist, line);) {
        const double acc = json::parse(line).at("val_accuracy").get<double>();
        ++epochs;
        if (acc == 1.0 && first_perfect == 0) first_perfect = epochs;
        best = std::max(best, acc);
    }
    c.expect(best == 1.0, "desk-32 best val acc " + fmt(best));
    c.expect(epochs == 5, "history has " + std::to_string(epochs) + " epochs");
    c.expect(elapsed < 300.0, "desk-32 took " + fmt(elapsed) + " s");
    c.note("desk-32 two_gaussians val acc 1.0 from epoch " + std::to_string(first_perfect) + ", " + fmt(elapsed, 3) + " s");

    const char* cifar = std::getenv("CIFAR10_DIR");
    if (cifar == nullptr || *cifar == '\0') {
        Outcome o = c.outcome();
        if (o.status == Status::pass) {
            o.status = Status::unverified;
            o.detail += "; desk-64 CIFAR-10 half not run: CIFAR10_DIR unset (projected " +
                        fmt(projected_cifar_seconds() / 60.0, 3) + " min for 20 epochs on 5000 images)";
        }
        return o;
    }
    // Per-epoch validation on the first 2000 test images, then the last checkpoint on all 10000.
    const auto t1 = Clock::now();
    const std::string data = " --data cifar10:'" + std::string(cifar) + "'";
    const auto rc = cli("--seed 1 " + outdir("c8-cifar") + "train --preset desk-64" + data + " --train-size " +
                            std::to_string(kCifarTrain) + " --val-size " + std::to_string(kCifarEpochVal) +
                            " --epochs " + std::to_string(kCifarEpochs) + " --batch " + std::to_string(kCifarBatch),
                        "c8-cifar");
    c.expect(rc.code == 0, "CIFAR train exit " + std::to_string(rc.code) + ": " + rc.err);
    const auto re = cli(outdir("c8-cifar-eval") + "eval --checkpoint '" + (g_scratch / "c8-cifar" / "last.ckpt").string() +
                            "'" + data + " --train-size 1 --val-size 0",
                        "c8-cifar-eval");
    const double cifar_elapsed = seconds_since(t1);
    c.expect(re.code == 0, "CIFAR eval exit " + std::to_string(re.code) + ": " + re.err);
    double top1 = 0.0;
    std::size_t n = 0;
    if (re.code == 0) {
        const json j = json::parse(slurp(g_scratch / "c8-cifar-eval" / "eval.json"));
        top1 = j.at("top1").get<double>();
        n = j.at("n").get<std::size_t>();
    }
    c.expect(n == 10000, "CIFAR eval covered " + std::to_string(n) + " test images");
    c.expect(top1 > 0.35, "CIFAR top-1 " + fmt(top1));
    c.expect(cifar_elapsed < 3600.0, "CIFAR run took " + fmt(cifar_elapsed / 60.0) + " min");
    c.note("desk-64 CIFAR-10 top-1 " + fmt(top1) + " on 10000 test images after 20 epochs on 5000, " +
           fmt(cifar_elapsed / 60.0) + " min");
    return c.outcome();
}

std::vector<std::size_t> token_index(const std::vector<TokenOrigin>& prov, std::size_t branch, std::size_t width) {
    std::vector<std::size_t> idx(width * width, 0);
    for (std::size_t k = 0; k < prov.size(); ++k)
        if (prov[k].branch == branch) idx[prov[k].row * width + prov[k].col] = k;
    return idx;
}

Outcome visualization() {
    Checks c;
    write_sample_images(g_scratch / "c9-images", 3);
    write_uniform_checkpoint(g_scratch / "c9-uniform.ckpt");
    write_one_hot_checkpoint(g_scratch / "c9-onehot.ckpt", 6);
    const std::string images = " --images '" + (g_scratch / "c9-images").string() + "'";
    const auto u = cli(outdir("c9-u") + "visualize --checkpoint '" + (g_scratch / "c9-uniform.ckpt").string() + "'" + images,
                       "c9-u");
    const auto h = cli(outdir("c9-h") + "visualize --checkpoint '" + (g_scratch / "c9-onehot.ckpt").string() + "'" + images,
                       "c9-h");
    c.expect(u.code == 0 && h.code == 0, "visualize exit " + std::to_string(u.code) + "/" + std::to_string(h.code));
    std::size_t files = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t b = 0; b < 3; ++b) {
            const std::string name = "img" + std::to_string(i) + ".branch" + std::to_string(b) + ".pgm";
            const std::string ub = slurp(g_scratch / "c9-u" / name), hb = slurp(g_scratch / "c9-h" / name);
            c.expect(ub.rfind("P5\n", 0) == 0 && hb.rfind("P5\n", 0) == 0, name + " lacks a P5 header");
            if (ub.empty() || hb.empty()) continue;
            ++files;
            const GrayImage ug = read_pgm(g_scratch / "c9-u" / name), hg = read_pgm(g_scratch / "c9-h" / name);
            c.expect(std::ranges::all_of(ug.pixels, [](auto p) { return p == 128; }), name + " uniform grid not mid-gray");
            for (std::size_t p = 0; p < hg.pixels.size(); ++p) {
                // Token 6 of desk-64 is branch 0, row 1, col 2.
                const bool hot = b == 0 && p == 1 * 4 + 2;
                c.expect(hg.pixels[p] == (hot ? 255 : 0), name + " one-hot pixel " + std::to_string(p));
            }
        }
    }
    c.expect(files == 9, std::to_string(files) + " grids instead of 9");

    // Trained model: corner cells of the 4x4 branch should carry below-median mean weight.
    const auto t0 = Clock::now();
    const auto tr = cli("--seed 1 " + outdir("c9-train") +
                            "train --preset desk-64 --data synthetic:centered --classes 4 --train-size 1000 "
                            "--val-size 200 --data-seed 7 --epochs 5 --batch 32",
                        "c9-train");
    c.expect(tr.code == 0, "desk-64 train exit " + std::to_string(tr.code) + ": " + tr.err);
    if (tr.code != 0) return c.outcome();
    const Model m = load_checkpoint(g_scratch / "c9-train" / "best.ckpt");
    const Dataset all = synthetic_set(SyntheticKind::centered, 1200, 64, 4, 7);
    std::vector<double> mean(m.provenance().size(), 0.0);
    {
        NoGradGuard guard;
        for (std::size_t s = 1000; s < 1200; s += 50) {
            std::vector<double> x;
            for (std::size_t i = s; i < s + 50; ++i) {
                const auto v = preprocess(all.images[i], 64, false, nullptr);
                x.insert(x.end(), v.begin(), v.end());
            }
            const ModelOutput out = m.forward(Tensor::from({50, 3, 64, 64}, std::move(x)), false);
            for (const auto& mw : out.merge.per_image)
                for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += mw.weights[k] / 200.0;
        }
    }
    const auto idx = token_index(m.provenance(), 0, 4);
    std::vector<double> grid(16);
    for (std::size_t p = 0; p < 16; ++p) grid[p] = mean[idx[p]];
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[7] + sorted[8]);
    double worst_ratio = 0.0;
    for (std::size_t p : {0u, 3u, 12u, 15u}) {
        worst_ratio = std::max(worst_ratio, grid[p] / median);
        c.expect(grid[p] < median, "corner " + std::to_string(p) + " at " + fmt(grid[p] / median, 5) + " x median");
    }
    c.note("fixtures exact over 9 grids; trained desk-64 corners at most " + fmt(worst_ratio, 5) + " x median (" +
           fmt(seconds_since(t0), 3) + " s)");
    return c.outcome();
}

Outcome determinism() {
    Checks c;
    write_sample_images(g_scratch / "c10-images", 2);
    write_uniform_checkpoint(g_scratch / "c10.ckpt");
    const std::string ckpt = (g_scratch / "c10.ckpt").string();
    const std::vector<std::string> invocations = {
        "describe --preset 880M",
        "flops --preset 610M --format structured --curve",
        "gradcheck --ops softmax,conv2d,model",
        "train --preset desk-32 --epochs 2 --train-size 64 --val-size 32 --mixup 0.8 --cutmix 1.0",
        "train --preset desk-64 --data synthetic:grid_patterns --epochs 1 --train-size 32 --val-size 8",
        "eval --checkpoint '" + ckpt + "' --data synthetic:centered --val-size 24",
        "visualize --checkpoint '" + ckpt + "' --images '" + (g_scratch / "c10-images").string() + "' --upscale 2",
    };
    std::size_t files = 0;
    for (std::size_t i = 0; i < invocations.size(); ++i) {
        const std::string a = "c10-" + std::to_string(i) + "a", b = "c10-" + std::to_string(i) + "b";
        const auto ra = cli("--seed 13 " + outdir(a) + invocations[i], a);
        const auto rb = cli("--seed 13 " + outdir(b) + invocations[i], b);
        c.expect(ra.code == 0 && rb.code == 0, invocations[i] + " exit " + std::to_string(ra.code));
        auto masked = [](std::string text, const fs::path& dir) {
            const std::string needle = dir.string();
            for (std::size_t p; (p = text.find(needle)) != std::string::npos;) text.replace(p, needle.size(), "<out>");
            return text;
        };
        c.expect(masked(ra.out, g_scratch / a) == masked(rb.out, g_scratch / b), invocations[i] + " stdout differs");
        if (!fs::exists(g_scratch / a)) continue;
        auto fa = dir_contents(g_scratch / a), fb = dir_contents(g_scratch / b);
        c.expect(fa.size() == fb.size(), invocations[i] + " file count differs");
        for (std::size_t k = 0; k < std::min(fa.size(), fb.size()); ++k) {
            ++files;
            if (fa[k].first == "manifest.json") {
                json ja = json::parse(fa[k].second), jb = json::parse(fb[k].second);
                ja.erase("output_dir");
                jb.erase("output_dir");
                c.expect(ja == jb, invocations[i] + " manifest differs");
            } else {
                c.expect(fa[k] == fb[k], invocations[i] + " " + fa[k].first + " differs");
            }
        }
    }
    c.note(std::to_string(invocations.size()) + " invocations, " + std::to_string(files) +
           " files and stdout identical across reruns (output directory path masked)");
    return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    bool allow_unverified = false;
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--allow-unverified") {
            allow_unverified = true;
        } else if (a == "--only" && i + 1 < argc) {
            only.push_back(std::stoi(argv[++i]));
        } else {
            std::cerr << "usage: mvit_acceptance [--allow-unverified] [--only N]...\n";
            return 2;
        }
    }
    g_cli = MVIT_CLI_PATH;
    g_scratch = fs::path(MVIT_TEST_SCRATCH) / (only.empty() ? "acceptance" : "acceptance-subset");
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"flops audit", flops_audit},
        {"token layout", token_layout},
        {"gradient suite", gradient_suite},
        {"apm invariants", apm_invariants},
        {"permutation property", permutation_property},
        {"ablation matrix", ablation_matrix},
        {"optimizer oracle", optimizer_oracle},
        {"desk training", desk_training},
        {"visualization", visualization},
        {"determinism", determinism},
    };
    int failed = 0, unverified = 0;
    std::ofstream report;
    if (only.empty()) report.open(fs::path(MVIT_TEST_SCRATCH).parent_path() / "acceptance_report.txt");
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && std::ranges::find(only, n) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Status::fail, std::string("exception: ") + e.what()};
        }
        const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "UNVERIFIED";
        failed += o.status == Status::fail;
        unverified += o.status == Status::unverified;
        std::ostringstream line;
        line << "[" << tag << "] " << std::setw(2) << n << " " << criteria[i].first << ": " << o.detail << "\n";
        std::cout << line.str() << std::flush;
        if (report) report << line.str() << std::flush;
    }
    if (failed > 0) return 1;
    if (unverified > 0 && !allow_unverified) return 3;
    return 0;
}
