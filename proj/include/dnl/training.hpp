#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnl/config.hpp"
#include "dnl/data.hpp"
#include "dnl/network.hpp"

namespace dnl {

// base_lr · (1 − iter/max_iter)^power. iter > max_iter is clamped to 0 with a
// warning on stderr.
double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power);

struct SgdState {
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<NamedTensor> velocity;  // mirrors the parameter list, created lazily
};

// v ← m·v + g + wd·p; p ← p − lr·v. A parameter without a gradient is treated
// as having a zero gradient. Non-finite gradients raise NumericError naming the
// parameter, before anything is modified.
void sgd_step(ModelParams& params, SgdState& state, double lr);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);

    // Rows are ground truth, columns predictions. Ignore-labelled pixels are skipped.
    void add(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);
    void merge(const ConfusionMatrix& other);

    std::size_t num_classes() const { return n_; }
    std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
    std::uint64_t total() const;

    // IoU per class; NaN for classes whose union is empty.
    std::vector<double> iou() const;
    // Mean over classes with a non-empty union; DataError when there is none.
    double miou() const;
    double pixel_accuracy() const;

private:
    std::size_t n_;
    std::vector<std::uint64_t> counts_;
};

// Per-pixel argmax over B×C×H×W logits (first maximum wins).
std::vector<std::uint8_t> argmax_labels(const Tensor& logits);

struct EvalResult {
    double miou = 0;
    std::vector<double> per_class_iou;
    double pixel_accuracy = 0;
    ConfusionMatrix confusion{1};
};

// Single-scale inference with running normalization statistics; logits are
// upsampled (nearest) to the label resolution.
EvalResult evaluate(const ModelParams& params, const NetConfig& cfg, std::span<const SegSample> samples);

// Throws ConfigError unless params carry exactly the tensors (names and shapes)
// that cfg describes.
void check_compatible(const ModelParams& params, const NetConfig& cfg);

struct HistoryRow {
    std::size_t iter = 0;
    double loss = 0, lp = 0, l1 = 0, l2 = 0, lgr = 0, lr = 0;
};

std::string history_header();
std::string history_line(const HistoryRow& row);

struct TrainHooks {
    std::function<void(const HistoryRow&)> on_step;
    // Called with each checkpoint as it is produced (periodic and final).
    // Periodic checkpoints are snapshots that share no storage with the model.
    std::function<void(const Checkpoint&)> on_checkpoint;
};

// Iterations per epoch and total iterations for a training set size.
std::size_t iterations_per_epoch(const TrainConfig& cfg, std::size_t samples);
std::size_t total_iterations(const TrainConfig& cfg, std::size_t samples);

// Deterministic SGD training. Starts from `resume` when given, otherwise from
// ModelParams::init(cfg.net, cfg.train.seed). Every random draw is keyed by
// (seed, epoch) or (seed, sample slot), so resuming at iteration i replays the
// uninterrupted run exactly.
Checkpoint train(const ExperimentConfig& cfg, std::span<const SegSample> samples, const TrainHooks& hooks = {},
                 const std::optional<Checkpoint>& resume = std::nullopt);

// Assembles B×3×H×W images and the matching label vector.
Tensor stack_images(std::span<const SegSample> batch);
std::vector<std::uint8_t> stack_labels(std::span<const SegSample> batch);

}  // namespace dnl
