#include "mvit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "mvit/ops.hpp"

namespace mvit {

using json = nlohmann::json;

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (!(lr >= 0.0)) fail("lr must be nonnegative");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be positive");
    if (batch == 0) fail("batch must be positive");
    if (accum_steps == 0 || accum_steps > batch) fail("accum_steps must lie in [1, batch]");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
    if (!(mixup_alpha >= 0.0) || !(cutmix_alpha >= 0.0)) fail("mixup/cutmix alpha must be nonnegative");
    if (world == 0) fail("world must be positive");
    if (!(autoscale_denominator > 0.0)) fail("autoscale_denominator must be positive");
}

double TrainConfig::effective_lr() const {
    if (!autoscale) return lr;
    return lr * static_cast<double>(batch * world) / autoscale_denominator;
}

std::string to_json(const TrainConfig& c) {
    json j{{"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"betas", {c.beta1, c.beta2}},
           {"eps", c.eps},
           {"epochs", c.epochs},
           {"batch", c.batch},
           {"warmup_epochs", c.warmup_epochs},
           {"label_smoothing", c.label_smoothing},
           {"mixup_alpha", c.mixup_alpha},
           {"cutmix_alpha", c.cutmix_alpha},
           {"seed", c.seed},
           {"accum_steps", c.accum_steps},
           {"augment", c.augment},
           {"autoscale", c.autoscale},
           {"world", c.world},
           {"autoscale_denominator", c.autoscale_denominator}};
    return j.dump(2);
}

TrainConfig train_config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config must be an object");
    static const std::set<std::string> allowed{"lr",          "weight_decay", "betas",        "eps",
                                               "epochs",      "batch",        "warmup_epochs", "label_smoothing",
                                               "mixup_alpha", "cutmix_alpha", "seed",         "accum_steps",
                                               "augment",     "autoscale",    "world",        "autoscale_denominator"};
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in train config");
    }
    TrainConfig c;
    auto read = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        const json& v = j.at(key);
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(std::string("train config.") + key + " must be a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(std::string("train config.") + key + " must be a nonnegative integer");
        } else {
            if (!v.is_number()) throw ConfigError(std::string("train config.") + key + " must be a number");
        }
        field = v.get<T>();
    };
    read("lr", c.lr);
    read("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
        const json& b = j.at("betas");
        if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
            throw ConfigError("train config.betas must be [beta1, beta2]");
        }
        c.beta1 = b[0].get<double>();
        c.beta2 = b[1].get<double>();
    }
    read("eps", c.eps);
    read("epochs", c.epochs);
    read("batch", c.batch);
    read("warmup_epochs", c.warmup_epochs);
    read("label_smoothing", c.label_smoothing);
    read("mixup_alpha", c.mixup_alpha);
    read("cutmix_alpha", c.cutmix_alpha);
    read("seed", c.seed);
    read("accum_steps", c.accum_steps);
    read("augment", c.augment);
    read("autoscale", c.autoscale);
    read("world", c.world);
    read("autoscale_denominator", c.autoscale_denominator);
    c.validate();
    return c;
}

void adamw_step(std::span<double> theta, std::span<const double> grad, AdamMoments& s, std::size_t t, double lr,
                const TrainConfig& cfg) {
    if (t == 0) throw ConfigError("adamw_step: t starts at 1");
    if (grad.size() != theta.size()) throw DimensionError("adamw_step: gradient size differs from parameter size");
    if (s.m.empty()) {
        s.m.assign(theta.size(), 0.0);
        s.v.assign(theta.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = s.m[i] / bc1;
        const double v_hat = s.v[i] / bc2;
        theta[i] -= lr * cfg.weight_decay * theta[i];
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

AdamW::AdamW(const ParameterStore& store) : moments_(store.parameters().size()) {}

void AdamW::step(ParameterStore& store, double lr, const TrainConfig& cfg) {
    auto& params = store.parameters();
    if (params.size() != moments_.size()) throw ConfigError("AdamW: parameter set changed");
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        const auto g = p.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw TrainingAborted("non-finite gradient " + std::to_string(g[i]) + " in " + p.name + "[" +
                                      std::to_string(i) + "] at optimizer step " + std::to_string(t_ + 1));
            }
        }
    }
    ++t_;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k].tensor;
        const std::vector<double> g = w.has_grad() ? w.grad() : std::vector<double>(w.numel(), 0.0);
        adamw_step(w.mutable_values(), g, moments_[k], t_, lr, cfg);
    }
}

Tensor smoothed_targets(const std::vector<std::uint32_t>& labels, std::size_t K, double eps) {
    if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
    std::vector<double> t(labels.size() * K, eps / static_cast<double>(K));
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] >= K) {
            throw IndexError("label " + std::to_string(labels[b]) + " at batch position " + std::to_string(b) +
                             " is outside [0, " + std::to_string(K) + ")");
        }
        t[b * K + labels[b]] += 1.0 - eps;
    }
    return Tensor::from({labels.size(), K}, std::move(t));
}

Tensor smoothed_cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& labels, double eps) {
    if (logits.rank() != 2 || logits.size(0) != labels.size()) {
        throw DimensionError("smoothed_cross_entropy: logits must be [B,K] with B labels");
    }
    return ops::cross_entropy(logits, smoothed_targets(labels, logits.size(1), eps));
}

CutBox cutmix_box(std::size_t size, double lambda, Rng& rng) {
    const auto S = static_cast<long long>(size);
    const double r = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
    const auto cut = static_cast<long long>(std::floor(static_cast<double>(S) * r));
    const auto cy = static_cast<long long>(uniform01(rng) * static_cast<double>(S));
    const auto cx = static_cast<long long>(uniform01(rng) * static_cast<double>(S));
    CutBox box;
    box.top = static_cast<std::size_t>(std::clamp(cy - cut / 2, 0LL, S));
    box.bottom = static_cast<std::size_t>(std::clamp(cy + cut - cut / 2, 0LL, S));
    box.left = static_cast<std::size_t>(std::clamp(cx - cut / 2, 0LL, S));
    box.right = static_cast<std::size_t>(std::clamp(cx + cut - cut / 2, 0LL, S));
    return box;
}

namespace {

void check_batch(const Tensor& images, const Tensor& targets) {
    if (images.rank() != 4 || targets.rank() != 2 || images.size(0) != targets.size(0)) {
        throw DimensionError("mixing expects images [B,3,S,S] and targets [B,K]");
    }
}

std::vector<double> blend_targets(const Tensor& targets, double lambda) {
    const std::size_t B = targets.size(0), K = targets.size(1);
    auto tv = targets.values();
    std::vector<double> out(B * K);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k)
            out[b * K + k] = lambda * tv[b * K + k] + (1.0 - lambda) * tv[(B - 1 - b) * K + k];
    return out;
}

}  // namespace

MixResult mixup(const Tensor& images, const Tensor& targets, double lambda) {
    check_batch(images, targets);
    const std::size_t B = images.size(0), D = images.numel() / B;
    auto xv = images.values();
    std::vector<double> out(xv.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < D; ++i)
            out[b * D + i] = lambda * xv[b * D + i] + (1.0 - lambda) * xv[(B - 1 - b) * D + i];
    MixResult r;
    r.images = Tensor::from(images.shape(), std::move(out));
    r.targets = Tensor::from(targets.shape(), blend_targets(targets, lambda));
    r.lambda = lambda;
    r.kind = MixKind::mixup;
    return r;
}

MixResult cutmix(const Tensor& images, const Tensor& targets, const CutBox& box) {
    check_batch(images, targets);
    const std::size_t B = images.size(0), C = images.size(1), H = images.size(2), W = images.size(3);
    if (H != W || box.bottom > H || box.right > W || box.top > box.bottom || box.left > box.right) {
        throw DimensionError("cutmix: box outside a square image");
    }
    MixResult r;
    r.kind = MixKind::cutmix;
    r.mask.assign(H * W, 0);
    for (std::size_t y = box.top; y < box.bottom; ++y)
        for (std::size_t x = box.left; x < box.right; ++x) r.mask[y * W + x] = 1;
    auto xv = images.values();
    std::vector<double> out(xv.begin(), xv.end());
    const std::size_t D = C * H * W;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < H * W; ++p)
                if (r.mask[p]) out[b * D + c * H * W + p] = xv[(B - 1 - b) * D + c * H * W + p];
    r.lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(H * W);
    r.images = Tensor::from(images.shape(), std::move(out));
    r.targets = Tensor::from(targets.shape(), blend_targets(targets, r.lambda));
    return r;
}

MixResult mixup_cutmix(const Tensor& images, const Tensor& targets, const TrainConfig& cfg, Rng& rng) {
    check_batch(images, targets);
    const bool can_mix = cfg.mixup_alpha > 0.0, can_cut = cfg.cutmix_alpha > 0.0;
    if (!can_mix && !can_cut) {
        MixResult r;
        r.images = images;
        r.targets = targets;
        return r;
    }
    bool use_cut = can_cut;
    if (can_mix && can_cut) use_cut = uniform01(rng) >= 0.5;
    const double alpha = use_cut ? cfg.cutmix_alpha : cfg.mixup_alpha;
    const double lambda = beta_sample(rng, alpha, alpha);
    if (!use_cut) return mixup(images, targets, lambda);
    return cutmix(images, targets, cutmix_box(images.size(2), lambda, rng));
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
    if (step >= total_steps) throw ConfigError("lr_at: step outside [0, total_steps)");
    const double start = 1e-6 * base_lr;
    if (step < warmup_steps) {
        return start + (base_lr - start) * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps - 1 <= warmup_steps) return base_lr;
    const double p = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - 1 - warmup_steps);
    return base_lr * (1e-2 + (1.0 - 1e-2) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)));
}

double accumulate_gradients(const Model& model, const Tensor& images, const Tensor& targets,
                            const ForwardContext& ctx, std::size_t accum) {
    const std::size_t B = images.size(0);
    if (accum == 0 || accum > B) throw ConfigError("accumulate_gradients: accum must lie in [1, B]");
    std::vector<std::uint64_t> ids = ctx.sample_ids;
    if (ids.empty()) {
        ids.resize(B);
        for (std::size_t i = 0; i < B; ++i) ids[i] = i;
    }
    double total = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < accum; ++k) {
        const std::size_t len = B / accum + (k < B % accum ? 1 : 0);
        ForwardContext micro = ctx;
        micro.sample_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                ids.begin() + static_cast<std::ptrdiff_t>(start + len));
        const Tensor x = ops::narrow(images, 0, start, len);
        const Tensor t = ops::narrow(targets, 0, start, len);
        const double share = static_cast<double>(len) / static_cast<double>(B);
        Tensor loss = ops::scale(ops::cross_entropy(model.forward(x, micro).logits, t), share);
        total += loss.item();
        if (!std::isfinite(loss.item())) return loss.item();
        loss.backward();
        start += len;
    }
    return total;
}

std::string to_jsonl(const EpochRecord& r) {
    return json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy}, {"lr", r.lr}}
        .dump();
}

Tensor assemble_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t size, bool train,
                      std::uint64_t seed, std::uint64_t epoch, const Normalization& n) {
    const std::size_t D = 3 * size * size;
    std::vector<double> out(indices.size() * D);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const LabeledImage& img = data.images.at(indices[b]);
        std::vector<double> x;
        if (train) {
            Rng rng = make_rng(seed, "augment", {epoch, indices[b]});
            x = preprocess(img, size, true, &rng, n);
        } else {
            x = preprocess(img, size, false, nullptr, n);
        }
        std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    return Tensor::from({indices.size(), 3, size, size}, std::move(out));
}

double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch, const Normalization& n) {
    if (data.size() == 0) return 0.0;
    NoGradGuard no_grad;
    const std::size_t S = model.config().input_size, K = model.config().num_classes;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i) idx.push_back(i);
        const Tensor logits = model.forward(assemble_batch(data, idx, S, false, 0, 0, n), false).logits;
        auto lv = logits.values();
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto row = lv.subspan(b * K, K);
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            if (best == data.images[idx[b]].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

// Writes next to the destination and renames, so an interrupted run never leaves a torn file.
void save_atomically(const std::filesystem::path& path, const Model& model) {
    auto tmp = path;
    tmp += ".tmp";
    save_checkpoint(tmp, model);
    std::filesystem::rename(checkpoint_config_path(tmp), checkpoint_config_path(path));
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<EpochRecord> train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                               const TrainOptions& options) {
    cfg.validate();
    const std::size_t S = options.image_size ? options.image_size : model.config().input_size;
    if (S != model.config().input_size) throw ConfigError("train: image size differs from the model input size");
    const std::size_t K = model.config().num_classes;
    if (train_set.size() == 0 && cfg.epochs > 0) throw ConfigError("train: empty training set");

    const bool write = !options.out_dir.empty();
    std::ofstream history;
    if (write) {
        std::filesystem::create_directories(options.out_dir);
        history.open(options.out_dir / kHistoryFile, std::ios::trunc);
        if (!history) throw IoError("cannot write " + (options.out_dir / kHistoryFile).string());
        save_atomically(options.out_dir / kBestCheckpoint, model);
        save_atomically(options.out_dir / kLastCheckpoint, model);
    }

    const std::size_t per_epoch = (train_set.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total = per_epoch * cfg.epochs, warmup = per_epoch * cfg.warmup_epochs;
    const double base_lr = cfg.effective_lr();
    AdamW opt(model.store());
    std::vector<EpochRecord> records;
    double best = -1.0;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle = make_rng(cfg.seed, "shuffle", {epoch});
        for (std::size_t i = order.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform01(shuffle) * static_cast<double>(i));
            std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
            const std::size_t begin = b * cfg.batch, end = std::min(begin + cfg.batch, order.size());
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::uint32_t> labels;
            for (std::size_t i : idx) labels.push_back(train_set.images[i].label);
            const Tensor images = assemble_batch(train_set, idx, S, cfg.augment, cfg.seed, epoch, options.normalization);
            Rng mix_rng = make_rng(cfg.seed, "mix", {epoch, b});
            const MixResult mixed = mixup_cutmix(images, smoothed_targets(labels, K, cfg.label_smoothing), cfg, mix_rng);

            ForwardContext ctx;
            ctx.training = true;
            ctx.seed = cfg.seed;
            ctx.epoch = epoch;
            ctx.sample_ids.assign(idx.begin(), idx.end());
            lr = lr_at(step, total, warmup, base_lr);
            model.store().zero_grad();
            const std::size_t accum = std::min(cfg.accum_steps, idx.size());
            double loss = 0.0;
            try {
                loss = accumulate_gradients(model, mixed.images, mixed.targets, ctx, accum);
            } catch (const TrainingAborted&) {
                throw;
            } catch (const NumericalError& e) {
                model.store().zero_grad();
                throw TrainingAborted("numerical failure at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b) + ": " + e.what() + "; last good checkpoint kept");
            }
            if (!std::isfinite(loss)) {
                model.store().zero_grad();
                throw TrainingAborted("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(b) + "; last good checkpoint kept");
            }
            opt.step(model.store(), lr, cfg);
            model.store().zero_grad();
            loss_sum += loss * static_cast<double>(idx.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.val_accuracy = evaluate_accuracy(model, val_set, cfg.batch, options.normalization);
        rec.lr = lr;
        records.push_back(rec);
        if (options.verbose) std::cerr << to_jsonl(rec) << '\n';
        if (write) {
            history << to_jsonl(rec) << '\n' << std::flush;
            save_atomically(options.out_dir / kLastCheckpoint, model);
            if (rec.val_accuracy > best) save_atomically(options.out_dir / kBestCheckpoint, model);
        }
        best = std::max(best, rec.val_accuracy);
    }
    return records;
}

}  // namespace mvit
