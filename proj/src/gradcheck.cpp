#include "dnl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dnl/data.hpp"
#include "dnl/ops.hpp"
#include "dnl/random.hpp"

namespace dnl {

double gradcheck_relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport run_gradcheck(const NetConfig& cfg, const GradcheckOptions& opt) {
    auto params = ModelParams::init(cfg, opt.seed);
    if (cfg.use_attention) {
        Tensor gamma = params.get("attn.gamma");
        gamma.mutable_data()[0] = static_cast<Scalar>(opt.gamma);
    }

    Pcg32 rng(opt.seed + seeds::kGradcheck);
    const std::size_t hw = opt.height * opt.width;
    std::vector<Scalar> pixels(cfg.image_channels * hw);
    for (auto& v : pixels) v = static_cast<Scalar>(rng.uniform());
    const auto image = Tensor::from({1, cfg.image_channels, opt.height, opt.width}, std::move(pixels));
    std::vector<std::uint8_t> labels(hw);
    for (auto& l : labels) {
        l = rng.bernoulli(0.1) ? kIgnoreLabel
                               : static_cast<std::uint8_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_classes) - 1));
    }

    auto loss = [&] {
        const auto out = model_forward(image, params, cfg, ForwardMode{true, nullptr});
        return joint_loss(out, labels, opt.height, opt.width, cfg).total;
    };

    params.zero_grad();
    debug::reset_relu_fingerprint();
    const auto root = loss();
    const auto base_pattern = debug::relu_fingerprint();
    root.backward();

    GradcheckReport report;
    report.passed = true;
    std::size_t total_checked = 0;
    for (const auto& named : params.params()) {
        Tensor t = named.tensor;
        GradcheckGroup group;
        group.name = named.name;
        const std::vector<Scalar> analytic = t.has_grad() ? std::vector<Scalar>(t.grad().begin(), t.grad().end())
                                                          : std::vector<Scalar>(t.numel(), Scalar{0});
        std::vector<std::size_t> picks;
        if (t.numel() <= opt.entries_per_tensor) {
            for (std::size_t i = 0; i < t.numel(); ++i) picks.push_back(i);
        } else {
            std::set<std::size_t> chosen;
            while (chosen.size() < opt.entries_per_tensor) {
                chosen.insert(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(t.numel()) - 1)));
            }
            picks.assign(chosen.begin(), chosen.end());
        }
        for (auto i : picks) {
            auto d = t.mutable_data();
            const Scalar saved = d[i];
            NoGradGuard no_grad;
            bool crossed = false;
            auto eval_at = [&](Scalar v) {
                d[i] = v;
                debug::reset_relu_fingerprint();
                const double value = loss().item();
                crossed = crossed || debug::relu_fingerprint() != base_pattern;
                return value;
            };
            const double plus = eval_at(saved + static_cast<Scalar>(opt.step));
            const double minus = eval_at(saved - static_cast<Scalar>(opt.step));
            d[i] = saved;
            if (crossed) {
                ++group.skipped;
                continue;
            }
            const double numeric = (plus - minus) / (2 * opt.step);
            const double err = gradcheck_relative_error(analytic[i], numeric, opt.floor);
            group.max_rel_error = std::max(group.max_rel_error, err);
            ++group.checked;
        }
        total_checked += group.checked;
        if (group.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = group.max_rel_error;
            report.worst = group.name;
        }
        if (!(group.max_rel_error < opt.tolerance)) report.passed = false;
        report.groups.push_back(std::move(group));
    }
    if (total_checked == 0) report.passed = false;
    return report;
}

}  // namespace dnl
