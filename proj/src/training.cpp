#include "dnl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "dnl/errors.hpp"
#include "dnl/random.hpp"

namespace dnl {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Permutation of [0, n) for one epoch, drawn from Pcg32(seed + kShuffle, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Pcg32 rng(seed + seeds::kShuffle, epoch);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

std::vector<NamedTensor> copy_velocity(const std::vector<NamedTensor>& v) {
    std::vector<NamedTensor> out;
    for (const auto& nt : v) {
        auto d = nt.tensor.data();
        out.push_back({nt.name, Tensor::from(nt.tensor.shape(), std::vector<Scalar>(d.begin(), d.end()))});
    }
    return out;
}

}  // namespace

double poly_lr(double base_lr, std::size_t iter, std::size_t max_iter, double power) {
    if (iter > max_iter) {
        std::cerr << "warning: poly_lr iteration " << iter << " exceeds max_iter " << max_iter
                  << "; learning rate clamped to 0\n";
        return 0.0;
    }
    if (max_iter == 0) return base_lr;
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
    return base_lr * std::pow(frac, power);
}

void sgd_step(ModelParams& params, SgdState& state, double lr) {
    const auto& list = params.params();
    for (const auto& p : list) {
        if (!p.tensor.has_grad()) continue;
        auto g = p.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(static_cast<double>(g[i]))) {
                throw NumericError("non-finite gradient in parameter '" + p.name + "' at index " + std::to_string(i) +
                                   " (value " + fmt(static_cast<double>(g[i])) + ")");
            }
        }
    }
    if (state.velocity.empty()) {
        for (const auto& p : list) state.velocity.push_back({p.name, Tensor::zeros(p.tensor.shape())});
    }
    if (state.velocity.size() != list.size()) throw ConfigError("optimizer state does not match parameter list");
    const auto m = static_cast<Scalar>(state.momentum);
    const auto wd = static_cast<Scalar>(state.weight_decay);
    const auto step = static_cast<Scalar>(lr);
    for (std::size_t k = 0; k < list.size(); ++k) {
        Tensor p = list[k].tensor;
        Tensor v = state.velocity[k].tensor;
        if (state.velocity[k].name != list[k].name || v.shape() != p.shape()) {
            throw ConfigError("optimizer state does not match parameter '" + list[k].name + "'");
        }
        auto pd = p.mutable_data();
        auto vd = v.mutable_data();
        const bool has = p.has_grad();
        auto g = has ? p.grad() : std::span<const Scalar>();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            const Scalar gi = has ? g[i] : Scalar{0};
            vd[i] = m * vd[i] + gi + wd * pd[i];
            pd[i] -= step * vd[i];
        }
    }
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
    if (predictions.size() != labels.size()) throw DimensionError("confusion matrix: prediction/label count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto t = labels[i];
        if (t == kIgnoreLabel) continue;
        const auto p = predictions[i];
        if (t >= n_ || p >= n_) {
            throw DataError("confusion matrix: class index " + std::to_string(std::max(t, p)) + " out of range");
        }
        ++counts_[t * n_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw DimensionError("confusion matrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::vector<double> ConfusionMatrix::iou() const {
    std::vector<double> out(n_);
    for (std::size_t c = 0; c < n_; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < n_; ++k) {
            row += count(c, k);
            col += count(k, c);
        }
        const std::uint64_t tp = count(c, c);
        const std::uint64_t uni = row + col - tp;
        out[c] = uni == 0 ? std::nan("") : static_cast<double>(tp) / static_cast<double>(uni);
    }
    return out;
}

double ConfusionMatrix::miou() const {
    double sum = 0;
    std::size_t used = 0;
    for (double v : iou()) {
        if (std::isnan(v)) continue;
        sum += v;
        ++used;
    }
    if (used == 0) throw DataError("mIoU undefined: no class has a non-empty union");
    return sum / static_cast<double>(used);
}

double ConfusionMatrix::pixel_accuracy() const {
    const auto t = total();
    if (t == 0) return 0.0;
    std::uint64_t correct = 0;
    for (std::size_t c = 0; c < n_; ++c) correct += count(c, c);
    return static_cast<double>(correct) / static_cast<double>(t);
}

std::vector<std::uint8_t> argmax_labels(const Tensor& logits) {
    if (logits.rank() != 4) throw DimensionError("argmax_labels: expects B×C×H×W, got " + shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    auto d = logits.data();
    std::vector<std::uint8_t> out(b * hw);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t best = 0;
            Scalar best_v = d[(i * c) * hw + p];
            for (std::size_t k = 1; k < c; ++k) {
                const Scalar v = d[(i * c + k) * hw + p];
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            out[i * hw + p] = static_cast<std::uint8_t>(best);
        }
    return out;
}

void check_compatible(const ModelParams& params, const NetConfig& cfg) {
    const auto skeleton = ModelParams::init(cfg, 0);
    auto compare = [](const std::vector<NamedTensor>& want, const std::vector<NamedTensor>& got, const char* what) {
        if (want.size() != got.size()) {
            throw ConfigError(std::string("checkpoint ") + what + " count " + std::to_string(got.size()) +
                              " does not match the configuration (" + std::to_string(want.size()) + ")");
        }
        for (std::size_t i = 0; i < want.size(); ++i) {
            if (want[i].name != got[i].name || want[i].tensor.shape() != got[i].tensor.shape()) {
                throw ConfigError(std::string("checkpoint ") + what + " '" + got[i].name + "' " +
                                  shape_str(got[i].tensor.shape()) + " does not match configuration entry '" +
                                  want[i].name + "' " + shape_str(want[i].tensor.shape()));
            }
        }
    };
    compare(skeleton.params(), params.params(), "parameter");
    compare(skeleton.buffers(), params.buffers(), "buffer");
}

EvalResult evaluate(const ModelParams& params, const NetConfig& cfg, std::span<const SegSample> samples) {
    check_compatible(params, cfg);
    if (samples.empty()) throw DataError("evaluate: no samples");
    NoGradGuard no_grad;
    EvalResult r;
    r.confusion = ConfusionMatrix(cfg.num_classes);
    for (const auto& s : samples) {
        for (auto l : s.labels) {
            if (l >= cfg.num_classes && l != kIgnoreLabel) {
                throw ConfigError("evaluate: sample " + s.id + " has label " + std::to_string(l) + " but the model has " +
                                  std::to_string(cfg.num_classes) + " classes");
            }
        }
        const auto out = model_forward(s.image, params, cfg);
        const auto logits = upsample_to(out.logits, s.height, s.width);
        r.confusion.add(argmax_labels(logits), s.labels);
    }
    r.per_class_iou = r.confusion.iou();
    r.miou = r.confusion.miou();
    r.pixel_accuracy = r.confusion.pixel_accuracy();
    return r;
}

std::string history_header() { return "iter,loss,lp,l1,l2,lgr,lr"; }

std::string history_line(const HistoryRow& r) {
    return std::to_string(r.iter) + "," + fmt(r.loss) + "," + fmt(r.lp) + "," + fmt(r.l1) + "," + fmt(r.l2) + "," +
           fmt(r.lgr) + "," + fmt(r.lr);
}

std::size_t iterations_per_epoch(const TrainConfig& cfg, std::size_t samples) {
    return (samples + cfg.batch_size - 1) / cfg.batch_size;
}

std::size_t total_iterations(const TrainConfig& cfg, std::size_t samples) {
    if (cfg.max_iter != 0) return cfg.max_iter;
    return cfg.epochs * iterations_per_epoch(cfg, samples);
}

Tensor stack_images(std::span<const SegSample> batch) {
    std::vector<Tensor> images;
    for (const auto& s : batch) images.push_back(s.image);
    return stack(images);
}

std::vector<std::uint8_t> stack_labels(std::span<const SegSample> batch) {
    std::vector<std::uint8_t> out;
    for (const auto& s : batch) out.insert(out.end(), s.labels.begin(), s.labels.end());
    return out;
}

Checkpoint train(const ExperimentConfig& cfg, std::span<const SegSample> samples, const TrainHooks& hooks,
                 const std::optional<Checkpoint>& resume) {
    cfg.validate();
    const auto& tc = cfg.train;
    if (samples.empty()) throw DataError("train: empty training set");
    for (const auto& s : samples) {
        if (s.image.shape() != Shape{cfg.net.image_channels, s.height, s.width} || s.labels.size() != s.height * s.width) {
            throw DataError("train: sample " + s.id + " has inconsistent extents");
        }
        for (auto l : s.labels) {
            if (l >= cfg.net.num_classes && l != kIgnoreLabel) {
                throw ConfigError("train: sample " + s.id + " has label " + std::to_string(l) + " but the model has " +
                                  std::to_string(cfg.net.num_classes) + " classes");
            }
        }
        if (!tc.augment && (s.height != tc.crop_h || s.width != tc.crop_w)) {
            throw ConfigError("train: with augmentation off every sample must be crop_h×crop_w");
        }
    }

    const std::size_t n = samples.size();
    const std::size_t per_epoch = iterations_per_epoch(tc, n);
    const std::size_t max_iter = total_iterations(tc, n);

    Checkpoint ckpt;
    ckpt.config_text = format_config(cfg);
    SgdState opt;
    opt.momentum = tc.momentum;
    opt.weight_decay = tc.weight_decay;
    if (resume) {
        check_compatible(resume->params, cfg.net);
        if (resume->iteration > max_iter) throw ConfigError("train: checkpoint iteration beyond max_iter");
        ckpt.params = resume->params.clone();
        ckpt.iteration = resume->iteration;
        opt.velocity = copy_velocity(resume->velocity);
    } else {
        ckpt.params = ModelParams::init(cfg.net, tc.seed);
    }

    AugmentSpec aug;
    aug.hflip = tc.hflip;
    aug.scale_min = tc.scale_min;
    aug.scale_max = tc.scale_max;
    aug.crop_h = tc.crop_h;
    aug.crop_w = tc.crop_w;

    std::vector<std::size_t> order;
    std::size_t order_epoch = static_cast<std::size_t>(-1);
    for (std::size_t it = ckpt.iteration; it < max_iter; ++it) {
        const std::size_t epoch = it / per_epoch, pos = it % per_epoch;
        if (epoch != order_epoch) {
            order = epoch_order(tc.seed, epoch, n);
            order_epoch = epoch;
        }
        std::vector<SegSample> batch;
        for (std::size_t j = pos * tc.batch_size; j < std::min(n, (pos + 1) * tc.batch_size); ++j) {
            const auto& src = samples[order[j]];
            if (tc.augment) {
                Pcg32 rng(tc.seed + seeds::kAugment, it * tc.batch_size + (j - pos * tc.batch_size));
                batch.push_back(augment(src, aug, rng));
            } else {
                batch.push_back(src);
            }
        }
        const auto images = stack_images(batch);
        const auto labels = stack_labels(batch);

        HistoryRow row;
        row.iter = it;
        row.lr = poly_lr(tc.base_lr, it, max_iter, tc.power);

        ckpt.params.zero_grad();
        std::vector<NormUpdate> updates;
        ForwardMode mode{true, &updates};
        const auto out = model_forward(images, ckpt.params, cfg.net, mode);
        const auto loss = joint_loss(out, labels, tc.crop_h, tc.crop_w, cfg.net);
        row.loss = loss.total.item();
        row.lp = loss.lp;
        row.l1 = loss.l1;
        row.l2 = loss.l2;
        row.lgr = loss.lgr;
        if (!std::isfinite(row.loss)) {
            throw NumericError("non-finite loss at iteration " + std::to_string(it) + " (lp " + fmt(row.lp) + ", l1 " +
                               fmt(row.l1) + ", l2 " + fmt(row.l2) + ", lgr " + fmt(row.lgr) + ")");
        }
        loss.total.backward();
        sgd_step(ckpt.params, opt, row.lr);
        apply_norm_updates(ckpt.params, updates, cfg.net.norm_momentum);
        ckpt.params.zero_grad();
        ckpt.iteration = it + 1;
        if (hooks.on_step) hooks.on_step(row);

        if (tc.checkpoint_every != 0 && ckpt.iteration % tc.checkpoint_every == 0 && ckpt.iteration != max_iter &&
            hooks.on_checkpoint) {
            Checkpoint snapshot{ckpt.config_text, ckpt.iteration, ckpt.params.clone(), copy_velocity(opt.velocity)};
            hooks.on_checkpoint(snapshot);
        }
    }
    ckpt.velocity = opt.velocity;
    if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
    return ckpt;
}

}  // namespace dnl
