#include "dnl/network.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "dnl/binary_io.hpp"
#include "dnl/errors.hpp"
#include "dnl/random.hpp"
#include "dnl/serialize.hpp"

namespace dnl {

namespace {

ConvSpec conv_spec(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                   std::size_t dilation = 1) {
    ConvSpec s;
    s.kernel_h = s.kernel_w = k;
    s.stride = stride;
    s.dilation = dilation;
    s.padding = dilation * (k / 2);
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

Tensor normal_param(Shape shape, double stddev, Pcg32& rng) {
    std::vector<Scalar> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(stddev * rng.normal());
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor conv_weight(std::size_t out, std::size_t in, std::size_t k, Pcg32& rng, double gain = 2.0) {
    const double fan_in = static_cast<double>(in * k * k);
    return normal_param({out, in, k, k}, std::sqrt(gain / fan_in), rng);
}

void add_norm(ModelParams& p, const std::string& prefix, std::size_t c) {
    p.add_param(prefix + ".weight", Tensor::full({c}, Scalar{1}, true));
    p.add_param(prefix + ".bias", Tensor::zeros({c}, true));
    p.add_buffer(prefix + ".running_mean", Tensor::zeros({c}));
    p.add_buffer(prefix + ".running_var", Tensor::full({c}, Scalar{1}));
}

Tensor norm(const Tensor& x, const ModelParams& p, const std::string& prefix, const NetConfig& cfg,
            const ForwardMode& mode) {
    BatchNormStats stats;
    const bool report = mode.training && mode.norm_updates != nullptr;
    auto y = batch_norm(x, p.get(prefix + ".weight"), p.get(prefix + ".bias"), p.get(prefix + ".running_mean"),
                        p.get(prefix + ".running_var"), mode.training, static_cast<Scalar>(cfg.norm_eps),
                        report ? &stats : nullptr);
    if (report) mode.norm_updates->push_back({prefix, std::move(stats)});
    return y;
}

Tensor conv_norm_relu(const Tensor& x, const ModelParams& p, const std::string& prefix, const ConvSpec& spec,
                      const NetConfig& cfg, const ForwardMode& mode) {
    return relu(norm(conv2d(x, p.get(prefix + ".weight"), spec), p, prefix + ".bn", cfg, mode));
}

std::size_t spatial_h(const Tensor& x) { return x.dim(x.rank() - 2); }
std::size_t spatial_w(const Tensor& x) { return x.dim(x.rank() - 1); }
std::size_t channels_of(const Tensor& x) { return x.dim(x.rank() - 3); }

void require_channels(const Tensor& x, std::size_t c, const char* what) {
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError(std::string(what) + ": expected C×H×W or B×C×H×W, got " + shape_str(x.shape()));
    }
    if (channels_of(x) != c) {
        throw DimensionError(std::string(what) + ": expected " + std::to_string(c) + " channels, got " +
                             shape_str(x.shape()));
    }
}

void write_named(io::Writer& w, std::ostream& os, const std::vector<NamedTensor>& list) {
    w.u32(static_cast<std::uint32_t>(list.size()));
    for (const auto& nt : list) {
        w.str(nt.name);
        write_tensor(os, nt.tensor);
    }
}

std::vector<NamedTensor> read_named(io::Reader& r, std::istream& is) {
    const std::uint32_t count = r.u32();
    if (count > (1u << 20)) throw CorruptionError("checkpoint: implausible tensor count");
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.str(4096);
        out.push_back({std::move(name), read_tensor(is)});
    }
    return out;
}

}  // namespace

void NetConfig::validate() const {
    if (image_channels == 0) throw ConfigError("net.image_channels must be positive");
    if (stem_widths.size() != 4) throw ConfigError("net.stem_widths must list exactly 4 widths");
    for (auto w : stem_widths)
        if (w == 0) throw ConfigError("net.stem_widths entries must be positive");
    if (head_channels == 0 || ctx_channels == 0) throw ConfigError("net.head_channels and net.ctx_channels must be positive");
    if (!(norm_eps > 0)) throw ConfigError("net.norm_eps must be positive");
    if (!(norm_momentum >= 0 && norm_momentum <= 1)) throw ConfigError("net.norm_momentum must lie in [0, 1]");
    if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(lambda_gr >= 0)) {
        throw ConfigError("loss weights lambda1, lambda2, lambda_gr must be >= 0");
    }
    attention_config().validate();
}

DenoisedNLConfig NetConfig::attention_config() const {
    DenoisedNLConfig a;
    a.channels = channels;
    a.reduced_channels = reduced_channels;
    a.num_classes = num_classes;
    a.window = window;
    a.gamma_init = gamma_init;
    a.use_gr = use_gr;
    a.use_lr = use_lr;
    a.coarse_softmax = coarse_softmax;
    a.force_pclass_ones = force_pclass_ones;
    return a;
}

void ModelParams::add_param(std::string name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = {true, params_.size()};
    params_.push_back({std::move(name), std::move(t)});
}

void ModelParams::add_buffer(std::string name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate buffer name " + name);
    index_[name] = {false, buffers_.size()};
    buffers_.push_back({std::move(name), std::move(t)});
}

bool ModelParams::has(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& ModelParams::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model has no tensor named " + name);
    return it->second.first ? params_[it->second.second].tensor : buffers_[it->second.second].tensor;
}

std::size_t ModelParams::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    for (const auto& p : params_) {
        auto d = p.tensor.data();
        out.add_param(p.name, Tensor::from(p.tensor.shape(), std::vector<Scalar>(d.begin(), d.end()), true));
    }
    for (const auto& b : buffers_) {
        auto d = b.tensor.data();
        out.add_buffer(b.name, Tensor::from(b.tensor.shape(), std::vector<Scalar>(d.begin(), d.end())));
    }
    return out;
}

ModelParams ModelParams::init(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Pcg32 rng(seed + seeds::kInit);
    ModelParams p;
    const auto& w = cfg.stem_widths;
    const std::size_t cb = cfg.backbone_channels(), c = cfg.channels, cn = cfg.num_classes;

    std::size_t in = cfg.image_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string prefix = "stem." + std::to_string(i);
        p.add_param(prefix + ".weight", conv_weight(w[i], in, 3, rng));
        add_norm(p, prefix + ".bn", w[i]);
        in = w[i];
    }
    p.add_param("reduce.weight", conv_weight(c, cb, 1, rng));
    add_norm(p, "reduce.bn", c);
    p.add_param("block.conv1.weight", conv_weight(c, c, 3, rng));
    add_norm(p, "block.conv1.bn", c);
    p.add_param("block.conv2.weight", conv_weight(c, c, 3, rng));
    add_norm(p, "block.conv2.bn", c);
    p.add_param("block.skip.weight", conv_weight(c, c, 1, rng));
    add_norm(p, "block.skip.bn", c);

    // Drawn for every variant so the shared layers start identical across ablations.
    auto attn = DenoisedNLParams::init(cfg.attention_config(), rng);
    if (cfg.use_attention) {
        p.add_param("attn.query", attn.query);
        p.add_param("attn.key", attn.key);
        p.add_param("attn.value", attn.value);
        if (cfg.use_gr) p.add_param("attn.coarse", attn.coarse);
        p.add_param("attn.gamma", attn.gamma);
    }

    p.add_param("ctx.weight", conv_weight(cfg.ctx_channels, cb, 1, rng, 1.0));
    p.add_param("ctx.bias", Tensor::zeros({cfg.ctx_channels}, true));
    p.add_param("head.conv.weight", conv_weight(cfg.head_channels, cb + c + cfg.ctx_channels, 3, rng));
    add_norm(p, "head.conv.bn", cfg.head_channels);
    p.add_param("head.cls.weight", conv_weight(cn, cfg.head_channels, 1, rng, 1.0));
    p.add_param("head.cls.bias", Tensor::zeros({cn}, true));
    p.add_param("aux2.weight", conv_weight(cn, w[1], 1, rng, 1.0));
    p.add_param("aux2.bias", Tensor::zeros({cn}, true));
    p.add_param("aux3.weight", conv_weight(cn, w[2], 1, rng, 1.0));
    p.add_param("aux3.bias", Tensor::zeros({cn}, true));
    return p;
}

std::size_t expected_param_count(const NetConfig& cfg) {
    const auto& w = cfg.stem_widths;
    const std::size_t cb = cfg.backbone_channels(), c = cfg.channels, cr = cfg.reduced_channels;
    const std::size_t cn = cfg.num_classes, hc = cfg.head_channels, xc = cfg.ctx_channels;
    std::size_t n = 0;
    std::size_t in = cfg.image_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        n += 9 * in * w[i] + 2 * w[i];
        in = w[i];
    }
    n += cb * c + 2 * c;                      // reduce
    n += 2 * (9 * c * c + 2 * c) + c * c + 2 * c;  // basic block
    if (cfg.use_attention) n += 2 * cr * c + c * c + (cfg.use_gr ? cn * c : 0) + 1;
    n += cb * xc + xc;
    n += 9 * (cb + c + xc) * hc + 2 * hc + hc * cn + cn;
    n += w[1] * cn + cn + w[2] * cn + cn;
    return n;
}

void apply_norm_updates(ModelParams& params, const std::vector<NormUpdate>& updates, double momentum) {
    const auto m = static_cast<Scalar>(momentum);
    for (const auto& u : updates) {
        Tensor mean = params.get(u.prefix + ".running_mean");
        Tensor var = params.get(u.prefix + ".running_var");
        auto md = mean.mutable_data();
        auto vd = var.mutable_data();
        for (std::size_t c = 0; c < md.size(); ++c) {
            md[c] = (Scalar{1} - m) * md[c] + m * u.stats.mean[c];
            vd[c] = (Scalar{1} - m) * vd[c] + m * u.stats.var[c];
        }
    }
}

StemOutput stem_forward(const Tensor& img, const ModelParams& params, const NetConfig& cfg,
                        const ForwardMode& mode) {
    require_channels(img, cfg.image_channels, "stem_forward");
    const std::size_t h = spatial_h(img), w = spatial_w(img);
    if (h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0) {
        throw ConfigError("stem_forward: input " + std::to_string(h) + "×" + std::to_string(w) +
                          " must have height and width divisible by 16");
    }
    const auto& widths = cfg.stem_widths;
    StemOutput out;
    Tensor x = img;
    std::size_t in = cfg.image_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto spec = i < 3 ? conv_spec(in, widths[i], 3, 2) : conv_spec(in, widths[i], 3, 1, 2);
        x = conv_norm_relu(x, params, "stem." + std::to_string(i), spec, cfg, mode);
        if (i == 1) out.res2 = x;
        if (i == 2) out.res3 = x;
        in = widths[i];
    }
    out.x = x;
    return out;
}

Tensor reduction_forward(const Tensor& x, const ModelParams& params, const NetConfig& cfg,
                         const ForwardMode& mode) {
    require_channels(x, cfg.backbone_channels(), "reduction_forward");
    if (spatial_h(x) % 2 != 0 || spatial_w(x) % 2 != 0) {
        throw ConfigError("reduction_forward: spatial extents must be even, got " + shape_str(x.shape()));
    }
    const std::size_t c = cfg.channels;
    const auto reduced = conv_norm_relu(x, params, "reduce", conv_spec(cfg.backbone_channels(), c, 1), cfg, mode);
    const auto h1 = conv_norm_relu(reduced, params, "block.conv1", conv_spec(c, c, 3, 2), cfg, mode);
    const auto h2 = norm(conv2d(h1, params.get("block.conv2.weight"), conv_spec(c, c, 3)), params,
                         "block.conv2.bn", cfg, mode);
    const auto skip = norm(conv2d(reduced, params.get("block.skip.weight"), conv_spec(c, c, 1, 2)), params,
                           "block.skip.bn", cfg, mode);
    return relu(add(h2, skip));
}

Tensor head_forward(const Tensor& x, const Tensor& f_prime, const ModelParams& params, const NetConfig& cfg,
                    const ForwardMode& mode) {
    require_channels(x, cfg.backbone_channels(), "head_forward");
    require_channels(f_prime, cfg.channels, "head_forward");
    const std::size_t h = spatial_h(x), w = spatial_w(x);
    if (spatial_h(f_prime) * 2 != h || spatial_w(f_prime) * 2 != w || x.rank() != f_prime.rank()) {
        throw DimensionError("head_forward: F' " + shape_str(f_prime.shape()) + " is not half the resolution of X " +
                             shape_str(x.shape()));
    }
    const auto ctx = conv2d(global_avg_pool(x), params.get("ctx.weight"), params.get("ctx.bias"),
                            conv_spec(cfg.backbone_channels(), cfg.ctx_channels, 1));
    const auto joined = concat_channels({x, upsample_nearest(f_prime, 2), broadcast_spatial(ctx, h, w)});
    const std::size_t in = cfg.backbone_channels() + cfg.channels + cfg.ctx_channels;
    const auto hidden = conv_norm_relu(joined, params, "head.conv", conv_spec(in, cfg.head_channels, 3), cfg, mode);
    return conv2d(hidden, params.get("head.cls.weight"), params.get("head.cls.bias"),
                  conv_spec(cfg.head_channels, cfg.num_classes, 1));
}

ModelOutput model_forward(const Tensor& img, const ModelParams& params, const NetConfig& cfg,
                          const ForwardMode& mode) {
    cfg.validate();
    const Tensor batch = img.rank() == 3 ? reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)}) : img;
    if (batch.rank() != 4) throw DimensionError("model_forward: expected B×C×H×W input, got " + shape_str(img.shape()));
    const std::size_t b = batch.dim(0);

    const auto stem = stem_forward(batch, params, cfg, mode);
    const auto f = reduction_forward(stem.x, params, cfg, mode);

    ModelOutput out;
    Tensor f_prime = f;
    if (cfg.use_attention) {
        const auto acfg = cfg.attention_config();
        DenoisedNLParams ap;
        ap.query = params.get("attn.query");
        ap.key = params.get("attn.key");
        ap.value = params.get("attn.value");
        if (cfg.use_gr) ap.coarse = params.get("attn.coarse");
        ap.gamma = params.get("attn.gamma");
        const std::size_t h = f.dim(2), w = f.dim(3);
        std::vector<Tensor> outputs, coarse;
        for (std::size_t i = 0; i < b; ++i) {
            auto r = denoised_nl_forward(select(f, i), ap, acfg);
            outputs.push_back(r.output);
            if (r.coarse_logits.defined()) coarse.push_back(reshape(r.coarse_logits, {cfg.num_classes, h, w}));
            out.states.push_back(std::move(r.state));
        }
        f_prime = stack(outputs);
        if (!coarse.empty()) out.coarse_logits = stack(coarse);
    }

    out.logits = head_forward(stem.x, f_prime, params, cfg, mode);
    out.aux2 = conv2d(stem.res2, params.get("aux2.weight"), params.get("aux2.bias"),
                      conv_spec(cfg.stem_widths[1], cfg.num_classes, 1));
    out.aux3 = conv2d(stem.res3, params.get("aux3.weight"), params.get("aux3.bias"),
                      conv_spec(cfg.stem_widths[2], cfg.num_classes, 1));
    return out;
}

Tensor upsample_to(const Tensor& logits, std::size_t h, std::size_t w) {
    const std::size_t lh = spatial_h(logits), lw = spatial_w(logits);
    if (lh == 0 || lw == 0 || h % lh != 0 || w % lw != 0 || h / lh != w / lw) {
        throw DimensionError("upsample_to: cannot map " + shape_str(logits.shape()) + " onto " + std::to_string(h) +
                             "×" + std::to_string(w) + " with one integer factor");
    }
    const std::size_t factor = h / lh;
    return factor == 1 ? logits : upsample_nearest(logits, factor);
}

LossTerms joint_loss(const ModelOutput& out, std::span<const std::uint8_t> labels, std::size_t label_h,
                     std::size_t label_w, double lambda1, double lambda2, double lambda_gr) {
    auto term = [&](const Tensor& logits) { return cross_entropy(upsample_to(logits, label_h, label_w), labels); };
    LossTerms t;
    const auto lp = term(out.logits);
    const auto l1 = term(out.aux2);
    const auto l2 = term(out.aux3);
    t.lp = lp.item();
    t.l1 = l1.item();
    t.l2 = l2.item();
    Tensor total = lp;
    if (lambda1 != 0) total = add(total, scale(l1, static_cast<Scalar>(lambda1)));
    if (lambda2 != 0) total = add(total, scale(l2, static_cast<Scalar>(lambda2)));
    if (out.coarse_logits.defined()) {
        const auto lgr = term(out.coarse_logits);
        t.lgr = lgr.item();
        if (lambda_gr != 0) total = add(total, scale(lgr, static_cast<Scalar>(lambda_gr)));
    }
    t.total = total;
    return t;
}

LossTerms joint_loss(const ModelOutput& out, std::span<const std::uint8_t> labels, std::size_t label_h,
                     std::size_t label_w, const NetConfig& cfg) {
    return joint_loss(out, labels, label_h, label_w, cfg.lambda1, cfg.lambda2, cfg.lambda_gr);
}

std::uint64_t FlopReport::macs(const std::string& block) const {
    for (const auto& e : blocks)
        if (e.block == block) return e.macs;
    return 0;
}

FlopReport count_flops(const NetConfig& cfg, std::size_t height, std::size_t width) {
    cfg.validate();
    if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
        throw ConfigError("count_flops: input extents must be positive multiples of 16");
    }
    using u64 = std::uint64_t;
    const auto& w = cfg.stem_widths;
    const u64 cb = cfg.backbone_channels(), c = cfg.channels, cr = cfg.reduced_channels;
    const u64 cn = cfg.num_classes, k2 = cfg.window * cfg.window;
    const u64 hc = cfg.head_channels, xc = cfg.ctx_channels;
    const u64 n2s = (height / 2) * (width / 2), n4 = (height / 4) * (width / 4), n8 = (height / 8) * (width / 8);
    const u64 n = (height / 16) * (width / 16);

    FlopReport r;
    r.positions = n;
    auto add_block = [&](std::string name, u64 macs) { r.blocks.push_back({std::move(name), macs}); };
    add_block("stem.0", n2s * w[0] * cfg.image_channels * 9);
    add_block("stem.1", n4 * w[1] * w[0] * 9);
    add_block("stem.2", n8 * w[2] * w[1] * 9);
    add_block("stem.3", n8 * w[3] * w[2] * 9);
    add_block("reduce", n8 * c * cb);
    add_block("block.conv1", n * c * c * 9);
    add_block("block.conv2", n * c * c * 9);
    add_block("block.skip", n * c * c);
    if (cfg.use_attention) {
        add_block("attn.qkv", n * c * (2 * cr + c));
        add_block("attn.core", n * n * (cr + c));
        if (cfg.use_gr) {
            add_block("attn.gr.coarse", n * c * cn);
            add_block("attn.gr.gram", n * n * cn);
            add_block("attn.gr.rectify", n * n);
        }
        if (cfg.use_lr) {
            add_block("attn.lr.similarity", n * k2 * cr);
            add_block("attn.lr.retention", n * n * k2);
        }
        add_block("attn.residual", n * c);
        std::uint64_t maps = 1 + (cfg.use_gr ? 2 : 0) + (cfg.use_lr ? 1 : 0);  // A, P_class, A', A''
        r.attention_map_bytes = (maps * n * n + (cfg.use_lr ? n * k2 : 0)) * sizeof(Scalar);
        r.attention_core_macs = n * n * (cr + c);
    }
    add_block("ctx", n8 * cb + cb * xc);
    add_block("head.conv", n8 * (cb + c + xc) * hc * 9);
    add_block("head.cls", n8 * hc * cn);
    add_block("aux2", n4 * w[1] * cn);
    add_block("aux3", n8 * w[2] * cn);
    for (const auto& e : r.blocks) {
        r.total_macs += e.macs;
        if (e.block.rfind("attn.", 0) == 0) r.module_macs += e.macs;
    }
    return r;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    io::Writer w(os);
    w.magic("DNLC");
    w.u32(kCheckpointFormatVersion);
    w.str(ckpt.config_text);
    w.u64(ckpt.iteration);
    write_named(w, os, ckpt.params.params());
    write_named(w, os, ckpt.params.buffers());
    write_named(w, os, ckpt.velocity);
    os.flush();
    if (!os) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    io::Reader r(is);
    r.expect_magic("DNLC", "checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config_text = r.str();
    ckpt.iteration = r.u64();
    for (auto& nt : read_named(r, is)) {
        nt.tensor.set_requires_grad(true);
        ckpt.params.add_param(std::move(nt.name), nt.tensor);
    }
    for (auto& nt : read_named(r, is)) ckpt.params.add_buffer(std::move(nt.name), nt.tensor);
    ckpt.velocity = read_named(r, is);
    return ckpt;
}

}  // namespace dnl
