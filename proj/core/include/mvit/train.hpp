#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvit/data.hpp"
#include "mvit/errors.hpp"
#include "mvit/layers.hpp"
#include "mvit/model.hpp"
#include "mvit/rng.hpp"
#include "mvit/tensor.hpp"

namespace mvit {

/// A label outside [0, K).
class IndexError : public Error {
public:
    using Error::Error;
};

/// Training stopped on a non-finite loss or gradient. The last good checkpoint is kept.
class TrainingAborted : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t epochs = 5;
    std::size_t batch = 64;
    std::size_t warmup_epochs = 1;
    double label_smoothing = 0.1;
    double mixup_alpha = 0.0;
    double cutmix_alpha = 0.0;
    std::uint64_t seed = 0;
    std::size_t accum_steps = 1;  // micro-batches per optimizer step
    bool augment = true;          // pad-4 crop and flip
    bool autoscale = false;       // lr * batch * world / autoscale_denominator
    std::size_t world = 1;
    double autoscale_denominator = 1024.0;

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;
    double effective_lr() const;

    bool operator==(const TrainConfig&) const = default;
};

std::string to_json(const TrainConfig& cfg);
/// Strict parse; absent keys keep their defaults, unknown keys are ConfigErrors.
TrainConfig train_config_from_json(std::string_view text);

/// First and second moments of one parameter.
struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One AdamW update at step t >= 1. Weight decay is decoupled: theta -= lr * wd * theta, then
/// theta -= lr * m_hat / (sqrt(v_hat) + eps).
void adamw_step(std::span<double> theta, std::span<const double> grad, AdamMoments& state, std::size_t t,
                double lr, const TrainConfig& cfg);

class AdamW {
public:
    explicit AdamW(const ParameterStore& store);

    /// Applies one update from the parameters' accumulated gradients. Every gradient is checked
    /// before any parameter changes; a non-finite entry throws TrainingAborted naming it.
    void step(ParameterStore& store, double lr, const TrainConfig& cfg);
    std::size_t steps() const { return t_; }

private:
    std::vector<AdamMoments> moments_;
    std::size_t t_ = 0;
};

/// (1 - eps) * onehot + eps / K per row.
Tensor smoothed_targets(const std::vector<std::uint32_t>& labels, std::size_t num_classes, double eps);
Tensor smoothed_cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& labels, double eps);

enum class MixKind { none, mixup, cutmix };

struct MixResult {
    Tensor images;   // [B,3,S,S]
    Tensor targets;  // [B,K]
    double lambda = 1.0;  // weight of each image's own target
    MixKind kind = MixKind::none;
    /// cutmix: S*S mask, 1 where the partner's pixels were pasted.
    std::vector<std::uint8_t> mask;
};

/// Rectangle pasted by cutmix, in pixel coordinates [top, bottom) x [left, right).
struct CutBox {
    std::size_t top = 0, bottom = 0, left = 0, right = 0;
    std::size_t area() const { return (bottom - top) * (right - left); }
};

/// Sides are floor(S * sqrt(1 - lambda)), centered at a uniform pixel and clipped to the image.
CutBox cutmix_box(std::size_t size, double lambda, Rng& rng);

/// Partner of image b is image B-1-b.
MixResult mixup(const Tensor& images, const Tensor& targets, double lambda);
/// lambda of the result is 1 - box area / S^2 exactly.
MixResult cutmix(const Tensor& images, const Tensor& targets, const CutBox& box);
/// Draws lambda ~ Beta(alpha, alpha) and picks mixup or cutmix uniformly when both alphas are
/// positive. Returns the batch unchanged when both are zero.
MixResult mixup_cutmix(const Tensor& images, const Tensor& targets, const TrainConfig& cfg, Rng& rng);

/// Linear warmup from 1e-6 * base to base over `warmup_steps`, then cosine to 1e-2 * base at the
/// last step.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

/// Forward and backward over `accum` equal-as-possible micro-batches. Each micro-batch loss is
/// weighted by its share of the batch, so the accumulated gradient equals the full-batch one.
/// Returns the batch loss.
double accumulate_gradients(const Model& model, const Tensor& images, const Tensor& targets,
                            const ForwardContext& ctx, std::size_t accum);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;  // at the epoch's last step

    bool operator==(const EpochRecord&) const = default;
};

std::string to_jsonl(const EpochRecord& r);

struct TrainOptions {
    std::filesystem::path out_dir;  // empty: no files written
    std::size_t image_size = 0;     // 0: model input size
    Normalization normalization;
    bool verbose = false;
};

/// File names inside TrainOptions::out_dir.
inline constexpr const char* kHistoryFile = "history.jsonl";
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";

/// Mini-batch training with shuffling, augmentation, mixing, label smoothing and DropPath, all
/// driven by streams keyed on (seed, purpose, epoch, index). Writes the initial model as the
/// best checkpoint, then after each epoch appends a history line, refreshes the last checkpoint
/// and replaces the best one when validation accuracy improves.
std::vector<EpochRecord> train(Model& model, const Dataset& train_set, const Dataset& val_set,
                               const TrainConfig& cfg, const TrainOptions& options = {});

/// [B,3,S,S] batch of preprocessed images; train mode uses streams keyed on (seed, epoch, id).
Tensor assemble_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t size, bool train,
                      std::uint64_t seed, std::uint64_t epoch, const Normalization& n = {});

/// Top-1 accuracy in evaluation mode.
double evaluate_accuracy(const Model& model, const Dataset& data, std::size_t batch, const Normalization& n = {});

}  // namespace mvit
