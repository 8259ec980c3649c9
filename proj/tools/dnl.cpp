// dnl: dataset generation, training, evaluation, attention dumps, FLOP reports
// and gradient checks from one executable.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure,
// 4 verification failure.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dnl/config.hpp"
#include "dnl/data.hpp"
#include "dnl/errors.hpp"
#include "dnl/gradcheck.hpp"
#include "dnl/inspect.hpp"
#include "dnl/network.hpp"
#include "dnl/ops.hpp"
#include "dnl/training.hpp"

namespace fs = std::filesystem;
using namespace dnl;

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerify = 4;

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_hash(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return fnv1a_hex(ss.str());
}

// The manifest is itself a valid config file: metadata lives in comments.
void write_manifest(const fs::path& path, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write manifest " + path.string());
    os << "# dnl run manifest\n";
    os << "# version: " << kVersion << "\n";
    os << "# command: " << command << "\n";
    os << "# config_hash: " << config_hash(cfg) << "\n";
    for (const auto& [k, v] : extra) os << "# " << k << ": " << v << "\n";
    os << "# started: " << utc_now() << "\n";
    os << format_config(cfg);
}

ExperimentConfig config_from(const std::string& path) { return path.empty() ? ExperimentConfig{} : load_config(path); }

void apply_sets(ExperimentConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
        set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
    return buf;
}

// ---------------------------------------------------------------- gen
struct GenArgs {
    std::string spec;
    long long n = -1;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int cmd_gen(const GenArgs& a) {
    if (a.n < 1) throw UsageError("--n must be at least 1");
    auto cfg = config_from(a.spec);
    if (a.seed) cfg.data.seed = *a.seed;
    cfg.validate();
    write_manifest(a.out + ".manifest", "gen", cfg, {{"n", std::to_string(a.n)}, {"out", a.out}});
    Dataset ds;
    ds.spec = cfg.data;
    ds.samples = generate(cfg.data, static_cast<std::size_t>(a.n));
    save_dataset(a.out, ds);
    const auto pixels = class_census(ds.samples, cfg.data.num_classes);
    const auto present = class_presence(ds.samples, cfg.data.num_classes);
    std::uint64_t total = 0;
    for (auto p : pixels) total += p;
    std::cout << "wrote " << ds.samples.size() << " samples to " << a.out << "\n";
    std::cout << "class  kind        pixels%  samples\n";
    for (std::size_t c = 0; c < pixels.size(); ++c) {
        std::printf("%5zu  %-10s  %s  %7llu\n", c, kind_name(class_kind(c)),
                    pct(total ? static_cast<double>(pixels[c]) / static_cast<double>(total) : 0.0).c_str(),
                    static_cast<unsigned long long>(present[c]));
    }
    std::cout << "dataset_hash=" << file_hash(a.out) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- train
struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string resume;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    bool no_gr = false, no_lr = false, no_attention = false;
};

int cmd_train(const TrainArgs& a) {
    auto cfg = config_from(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.no_gr) cfg.net.use_gr = false;
    if (a.no_lr) cfg.net.use_lr = false;
    if (a.no_attention) cfg.net.use_attention = false;
    apply_sets(cfg, a.sets);

    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        const auto saved = parse_config(resume->config_text);
        if (format_config(saved) != format_config(cfg)) {
            throw ConfigError("checkpoint " + a.resume + " was written with a different configuration (hash " +
                              config_hash(saved) + ", current " + config_hash(cfg) + ")");
        }
    }
    const auto ds = load_dataset(a.data, cfg.net.num_classes);
    const std::size_t max_iter = total_iterations(cfg.train, ds.samples.size());
    fs::create_directories(a.out);
    write_manifest(fs::path(a.out) / "manifest.txt", "train", cfg,
                   {{"seed", std::to_string(cfg.train.seed)},
                    {"data", a.data},
                    {"data_hash", file_hash(a.data)},
                    {"resume", a.resume.empty() ? "none" : a.resume},
                    {"max_iter", std::to_string(max_iter)}});

    if (resume && resume->iteration >= max_iter) {
        std::cout << "checkpoint already at iteration " << resume->iteration << " of " << max_iter
                  << "; nothing to do\n";
        return kExitOk;
    }

    const fs::path history_path = fs::path(a.out) / "history.csv";
    std::ofstream history(history_path, resume ? std::ios::app : std::ios::trunc);
    if (!history) throw Error("cannot write " + history_path.string());
    if (!resume) history << history_header() << "\n";

    TrainHooks hooks;
    hooks.on_step = [&](const HistoryRow& row) {
        history << history_line(row) << "\n";
        if (row.iter % 50 == 0 || row.iter + 1 == max_iter) {
            std::printf("iter %6zu  loss %.5f  lr %.3e\n", row.iter, row.loss, row.lr);
            std::fflush(stdout);
        }
    };
    hooks.on_checkpoint = [&](const Checkpoint& ck) {
        const auto name = ck.iteration == max_iter ? std::string("final.dnlc")
                                                   : "ckpt_" + std::to_string(ck.iteration) + ".dnlc";
        save_checkpoint(fs::path(a.out) / name, ck);
    };
    try {
        train(cfg, ds.samples, hooks, resume);
    } catch (const NumericError& e) {
        history.flush();
        std::ofstream diag(fs::path(a.out) / "diagnostic.txt", std::ios::trunc);
        diag << "numeric failure: " << e.what() << "\nconfig_hash: " << config_hash(cfg) << "\n";
        throw;
    }
    std::cout << "final checkpoint: " << (fs::path(a.out) / "final.dnlc").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- eval
struct EvalArgs {
    std::string ckpt;
    std::string data;
};

int cmd_eval(const EvalArgs& a) {
    const auto ck = load_checkpoint(a.ckpt);
    const auto cfg = parse_config(ck.config_text);
    const auto ds = load_dataset(a.data, cfg.net.num_classes);
    const auto r = evaluate(ck.params, cfg.net, ds.samples);
    std::cout << "class  kind         IoU%\n";
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
        const double v = r.per_class_iou[c];
        std::printf("%5zu  %-10s  %s\n", c, kind_name(class_kind(c)), std::isnan(v) ? "   n/a" : pct(v).c_str());
    }
    std::printf("mIoU %s%%  pixel accuracy %s%%\n", pct(r.miou).c_str(), pct(r.pixel_accuracy).c_str());
    std::printf("miou=%.17g\npixel_accuracy=%.17g\n", r.miou, r.pixel_accuracy);
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) std::printf("iou_%zu=%.17g\n", c, r.per_class_iou[c]);
    std::printf("iteration=%llu\nconfig_hash=%s\n", static_cast<unsigned long long>(ck.iteration),
                config_hash(cfg).c_str());
    return kExitOk;
}

// ---------------------------------------------------------------- dump-attention
struct DumpArgs {
    std::string ckpt;
    std::string data;
    std::string image;
    std::string pixel;
    std::string out;
    bool force_pclass_ones = false;
};

const SegSample& find_sample(const Dataset& ds, const std::string& id) {
    for (const auto& s : ds.samples)
        if (s.id == id) return s;
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), idx);
    if (ec == std::errc() && ptr == id.data() + id.size() && idx < ds.samples.size()) return ds.samples[idx];
    throw UsageError("no sample with id or index '" + id + "'");
}

int cmd_dump(const DumpArgs& a) {
    std::size_t x = 0, y = 0;
    {
        const auto comma = a.pixel.find(',');
        if (comma == std::string::npos) throw UsageError("--pixel expects X,Y");
        const auto xs = a.pixel.substr(0, comma), ys = a.pixel.substr(comma + 1);
        const auto rx = std::from_chars(xs.data(), xs.data() + xs.size(), x);
        const auto ry = std::from_chars(ys.data(), ys.data() + ys.size(), y);
        if (rx.ec != std::errc() || ry.ec != std::errc() || rx.ptr != xs.data() + xs.size() ||
            ry.ptr != ys.data() + ys.size()) {
            throw UsageError("--pixel expects two non-negative integers X,Y");
        }
    }
    const auto ck = load_checkpoint(a.ckpt);
    auto cfg = parse_config(ck.config_text);
    check_compatible(ck.params, cfg.net);
    cfg.net.force_pclass_ones = a.force_pclass_ones;
    const auto ds = load_dataset(a.data, cfg.net.num_classes);
    const auto& sample = find_sample(ds, a.image);
    const auto dump = dump_attention(ck.params, cfg.net, sample, x, y);
    fs::create_directories(a.out);
    write_manifest(fs::path(a.out) / "manifest.txt", "dump-attention", cfg,
                   {{"checkpoint", a.ckpt},
                    {"data", a.data},
                    {"image", sample.id},
                    {"pixel", a.pixel},
                    {"force_pclass_ones", a.force_pclass_ones ? "true" : "false"}});
    write_attention_dump(a.out, dump);
    write_ppm(fs::path(a.out) / "image.ppm", sample.image);
    write_label_pgm(fs::path(a.out) / "labels.pgm", sample.labels, sample.height, sample.width, cfg.net.num_classes);

    const auto grid = grid_labels(sample, 16);
    const auto cls = sample.labels[y * sample.width + x];
    double sums[3] = {0, 0, 0};
    const std::vector<Scalar>* maps[] = {&dump.map1, &dump.map2, &dump.map3};
    for (int i = 0; i < 3; ++i)
        for (auto v : *maps[i]) sums[i] += v;
    std::printf("query cell (%zu,%zu) of %zux%zu grid, class %u\n", x / 16, y / 16, dump.grid_w, dump.grid_h,
                static_cast<unsigned>(cls));
    for (int i = 0; i < 3; ++i) {
        std::printf("map%d row_sum=%.17g region_mass=%.17g\n", i + 1, sums[i],
                    cls == kIgnoreLabel ? 0.0 : region_mass_fraction(*maps[i], grid, cls));
    }
    return kExitOk;
}

// ---------------------------------------------------------------- flops
struct FlopsArgs {
    std::string config;
    std::string input = "768x768";
    std::vector<std::string> sets;
};

int cmd_flops(const FlopsArgs& a) {
    auto cfg = config_from(a.config);
    apply_sets(cfg, a.sets);
    std::size_t h = 0, w = 0;
    const auto xpos = a.input.find_first_of("xX");
    if (xpos == std::string::npos) throw UsageError("--input expects HxW");
    const auto hs = a.input.substr(0, xpos), ws = a.input.substr(xpos + 1);
    const auto rh = std::from_chars(hs.data(), hs.data() + hs.size(), h);
    const auto rw = std::from_chars(ws.data(), ws.data() + ws.size(), w);
    if (rh.ec != std::errc() || rw.ec != std::errc() || rh.ptr != hs.data() + hs.size() || rw.ptr != ws.data() + ws.size()) {
        throw UsageError("--input expects HxW with integer extents");
    }
    const auto r = count_flops(cfg.net, h, w);
    std::printf("%-22s %20s\n", "block", "MACs");
    for (const auto& e : r.blocks) std::printf("%-22s %20llu\n", e.block.c_str(), static_cast<unsigned long long>(e.macs));
    std::printf("%-22s %20llu\n", "attention core", static_cast<unsigned long long>(r.attention_core_macs));
    std::printf("%-22s %20llu  (%.3f G)\n", "attention module", static_cast<unsigned long long>(r.module_macs),
                static_cast<double>(r.module_macs) / 1e9);
    std::printf("%-22s %20llu  (%.3f G)\n", "total", static_cast<unsigned long long>(r.total_macs),
                static_cast<double>(r.total_macs) / 1e9);
    std::printf("%-22s %20llu  (%.1f MiB)\n", "attention map bytes", static_cast<unsigned long long>(r.attention_map_bytes),
                static_cast<double>(r.attention_map_bytes) / (1024.0 * 1024.0));
    std::printf("positions=%zu\nattention_core_macs=%llu\nmodule_macs=%llu\ntotal_macs=%llu\nattention_map_bytes=%llu\n",
                r.positions, static_cast<unsigned long long>(r.attention_core_macs),
                static_cast<unsigned long long>(r.module_macs), static_cast<unsigned long long>(r.total_macs),
                static_cast<unsigned long long>(r.attention_map_bytes));
    for (const auto& e : r.blocks) std::printf("macs.%s=%llu\n", e.block.c_str(), static_cast<unsigned long long>(e.macs));
    return kExitOk;
}

// ---------------------------------------------------------------- gradcheck
struct GradArgs {
    std::string config;
    std::uint64_t seed = 0;
    bool corrupt = false;
    std::vector<std::string> sets;
};

int cmd_gradcheck(const GradArgs& a) {
    auto cfg = config_from(a.config);
    apply_sets(cfg, a.sets);
    GradcheckOptions opt;
    opt.seed = a.seed;
    debug::set_corrupt_sigmoid_adjoint(a.corrupt);
    const auto r = run_gradcheck(cfg.net, opt);
    debug::set_corrupt_sigmoid_adjoint(false);
    std::printf("%-22s %14s %8s %8s\n", "parameter", "max rel err", "checked", "skipped");
    for (const auto& g : r.groups) {
        std::printf("%-22s %14.3e %8zu %8zu\n", g.name.c_str(), g.max_rel_error, g.checked, g.skipped);
    }
    std::printf("max_rel_error=%.6e worst=%s tolerance=%.1e\n", r.max_rel_error, r.worst.c_str(), opt.tolerance);
    if (!r.passed) {
        std::cerr << "gradient check failed: parameter '" << r.worst << "' has relative error " << r.max_rel_error
                  << "\n";
        return kExitVerify;
    }
    std::cout << "gradient check passed\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Denoised non-local attention toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a synthetic shapes dataset");
    g->add_option("--spec", gen.spec, "Config file (data.* keys are used)");
    g->add_option("--n", gen.n, "Number of samples")->required();
    g->add_option("--out", gen.out, "Output dataset file")->required();
    g->add_option("--seed", gen.seed, "Override data.seed");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--config", tr.config, "Config file");
    t->add_option("--data", tr.data, "Training dataset file")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    t->add_option("--seed", tr.seed, "Override train.seed");
    t->add_option("--set", tr.sets, "Override a config key (key=value)");
    t->add_flag("--no-gr", tr.no_gr, "Disable Global Rectifying");
    t->add_flag("--no-lr", tr.no_lr, "Disable Local Retention");
    t->add_flag("--no-attention", tr.no_attention, "Remove the attention block");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
    e->add_option("--data", ev.data, "Dataset file")->required();

    DumpArgs du;
    auto* d = app.add_subcommand("dump-attention", "Export attention maps #1-#3 for one query pixel");
    d->add_option("--ckpt", du.ckpt, "Checkpoint file")->required();
    d->add_option("--data", du.data, "Dataset file")->required();
    d->add_option("--image", du.image, "Sample id or index")->required();
    d->add_option("--pixel", du.pixel, "Query pixel X,Y in input coordinates")->required();
    d->add_option("--out", du.out, "Output directory")->required();
    d->add_flag("--force-pclass-ones", du.force_pclass_ones, "Replace P_class by ones (debug)");

    FlopsArgs fl;
    auto* f = app.add_subcommand("flops", "Report multiply-accumulate counts per block");
    f->add_option("--config", fl.config, "Config file");
    f->add_option("--input", fl.input, "Input extent HxW")->capture_default_str();
    f->add_option("--set", fl.sets, "Override a config key (key=value)");

    GradArgs gr;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference check of the model gradient");
    c->add_option("--config", gr.config, "Config file");
    c->add_option("--seed", gr.seed, "Seed")->capture_default_str();
    c->add_option("--set", gr.sets, "Override a config key (key=value)");
    c->add_flag("--corrupt-adjoint", gr.corrupt, "Negative control: corrupt the sigmoid adjoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForVersion& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return kExitConfig;
    }

    try {
        if (g->parsed()) return cmd_gen(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (d->parsed()) return cmd_dump(du);
        if (f->parsed()) return cmd_flops(fl);
        if (c->parsed()) return cmd_gradcheck(gr);
    } catch (const NumericError& ex) {
        std::cerr << "numeric error: " << ex.what() << "\n";
        return kExitNumeric;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
