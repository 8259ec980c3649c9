#include "dnl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "dnl/binary_io.hpp"
#include "dnl/errors.hpp"
#include "kernels.hpp"

namespace dnl {

namespace {

struct ShapeInstance {
    std::size_t cls = 0;
    ShapeKind kind = ShapeKind::Background;
    double cx = 0, cy = 0;
    double a = 0, b = 0;  // radius or half-extents
    double theta = 0;     // stripe orientation
};

bool inside(const ShapeInstance& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (s.kind) {
        case ShapeKind::Rectangle:
            return std::abs(dx) <= s.a && std::abs(dy) <= s.b;
        case ShapeKind::Disk:
            return dx * dx + dy * dy <= s.a * s.a;
        case ShapeKind::Ring: {
            const double d2 = dx * dx + dy * dy;
            return d2 <= s.a * s.a && d2 >= 0.25 * s.a * s.a;
        }
        case ShapeKind::Stripe: {
            const double c = std::cos(s.theta), sn = std::sin(s.theta);
            const double along = dx * c + dy * sn, across = -dx * sn + dy * c;
            return std::abs(along) <= s.a && std::abs(across) <= s.b;
        }
        case ShapeKind::Background:
            return false;
    }
    return false;
}

// Class-specific fill modulation in [0, 1].
double texture_value(std::size_t cls, std::size_t x, std::size_t y) {
    const std::size_t idx = cls - 1;
    const double period = 3.0 + static_cast<double>(idx / 3);
    double u = 0;
    switch (idx % 3) {
        case 0: u = static_cast<double>(x); break;
        case 1: u = static_cast<double>(y); break;
        default: u = static_cast<double>(x + y); break;
    }
    return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / period);
}

SegSample render(const ShapesSpec& spec, std::size_t index) {
    Pcg32 rng(spec.seed, index);
    const std::size_t h = spec.height, w = spec.width, hw = h * w;
    const double side = static_cast<double>(std::min(h, w));
    const double rmin = spec.size_min * side, rmax = spec.size_max * side;

    std::vector<ShapeInstance> shapes;
    for (std::size_t cls = 1; cls < spec.num_classes; ++cls) {
        const auto count = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.min_count(cls)),
                                                                    static_cast<std::int64_t>(spec.max_count(cls))));
        for (std::size_t i = 0; i < count; ++i) {
            ShapeInstance s;
            s.cls = cls;
            s.kind = class_kind(cls);
            s.cx = rng.uniform(0.0, static_cast<double>(w));
            s.cy = rng.uniform(0.0, static_cast<double>(h));
            s.a = rng.uniform(rmin, rmax);
            s.b = rng.uniform(rmin, rmax);
            s.theta = rng.uniform(0.0, std::numbers::pi);
            if (s.kind == ShapeKind::Stripe) {
                s.a *= 1.5;
                s.b = std::max(1.0, 0.3 * s.b);
            }
            shapes.push_back(s);
        }
    }
    for (std::size_t i = shapes.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
        std::swap(shapes[i - 1], shapes[j]);
    }

    std::vector<Scalar> img(3 * hw);
    std::vector<std::uint8_t> labels(hw, 0);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto bg = static_cast<Scalar>(rng.uniform(0.0, 0.4));
        std::fill(img.begin() + static_cast<long>(ch * hw), img.begin() + static_cast<long>((ch + 1) * hw), bg);
    }
    for (const auto& s : shapes) {
        double color[3];
        for (auto& c : color) c = rng.uniform(0.5, 1.0);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                if (!inside(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
                const std::size_t p = y * w + x;
                labels[p] = static_cast<std::uint8_t>(s.cls);
                const double mod = spec.texture ? 0.7 + 0.3 * texture_value(s.cls, x, y) : 1.0;
                for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + p] = static_cast<Scalar>(color[ch] * mod);
            }
    }
    if (spec.noise_sigma > 0) {
        for (auto& v : img) {
            const double noisy = static_cast<double>(v) + spec.noise_sigma * rng.normal();
            v = static_cast<Scalar>(std::clamp(noisy, 0.0, 1.0));
        }
    }

    SegSample out;
    out.image = Tensor::from({3, h, w}, std::move(img));
    out.labels = std::move(labels);
    out.height = h;
    out.width = w;
    out.id = "shape-" + std::to_string(spec.seed) + "-" + std::to_string(index);
    return out;
}

void write_spec(io::Writer& wr, const ShapesSpec& s) {
    wr.u32(static_cast<std::uint32_t>(s.height));
    wr.u32(static_cast<std::uint32_t>(s.width));
    wr.u32(static_cast<std::uint32_t>(s.num_classes));
    wr.u32(static_cast<std::uint32_t>(s.count_min.size()));
    for (auto v : s.count_min) wr.u32(static_cast<std::uint32_t>(v));
    wr.u32(static_cast<std::uint32_t>(s.count_max.size()));
    for (auto v : s.count_max) wr.u32(static_cast<std::uint32_t>(v));
    wr.f64(s.size_min);
    wr.f64(s.size_max);
    wr.f64(s.noise_sigma);
    wr.u8(s.texture ? 1 : 0);
    wr.u64(s.seed);
}

std::vector<std::size_t> read_counts(io::Reader& rd) {
    const std::uint32_t n = rd.u32();
    if (n > 256) throw CorruptionError("dataset: implausible count list length");
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = rd.u32();
    return v;
}

ShapesSpec read_spec(io::Reader& rd) {
    ShapesSpec s;
    s.height = rd.u32();
    s.width = rd.u32();
    s.num_classes = rd.u32();
    s.count_min = read_counts(rd);
    s.count_max = read_counts(rd);
    s.size_min = rd.f64();
    s.size_max = rd.f64();
    s.noise_sigma = rd.f64();
    s.texture = rd.u8() != 0;
    s.seed = rd.u64();
    return s;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    return os;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

ShapeKind class_kind(std::size_t cls) {
    if (cls == 0) return ShapeKind::Background;
    return static_cast<ShapeKind>((cls - 1) % 4 + 1);
}

const char* kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Background: return "background";
        case ShapeKind::Rectangle: return "rectangle";
        case ShapeKind::Disk: return "disk";
        case ShapeKind::Ring: return "ring";
        case ShapeKind::Stripe: return "stripe";
    }
    return "?";
}

void ShapesSpec::validate() const {
    if (height == 0 || width == 0) throw ConfigError("data: canvas height and width must be positive");
    if (height > 65535 || width > 65535) throw ConfigError("data: canvas too large");
    if (num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
    if (num_classes > 254) throw ConfigError("data.num_classes must be at most 254");
    if (num_classes > 5 && !texture) {
        throw ConfigError("data.num_classes = " + std::to_string(num_classes) +
                          " exceeds the 5 shape kinds; enable data.texture to tell repeated kinds apart");
    }
    const std::size_t fg = num_classes - 1;
    for (const auto* list : {&count_min, &count_max}) {
        if (list->size() != 1 && list->size() != fg) {
            throw ConfigError("data.count_min/count_max need 1 or " + std::to_string(fg) + " entries");
        }
    }
    for (std::size_t c = 1; c < num_classes; ++c) {
        if (min_count(c) > max_count(c)) throw ConfigError("data.count_min exceeds data.count_max");
    }
    if (!(size_min > 0) || !(size_max >= size_min)) throw ConfigError("data: need 0 < size_min <= size_max");
    if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma)) throw ConfigError("data.noise_sigma must be >= 0");
}

std::size_t ShapesSpec::min_count(std::size_t cls) const {
    return count_min.size() == 1 ? count_min[0] : count_min.at(cls - 1);
}

std::size_t ShapesSpec::max_count(std::size_t cls) const {
    return count_max.size() == 1 ? count_max[0] : count_max.at(cls - 1);
}

std::vector<SegSample> generate(const ShapesSpec& spec, std::size_t n, std::size_t first_index) {
    spec.validate();
    if (n == 0) throw UsageError("generate: n must be at least 1");
    std::vector<SegSample> out(n);
    kernels::parallel_for(n, spec.height * spec.width * 64, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = render(spec, first_index + i);
    });
    return out;
}

SegSample hflip(const SegSample& s) {
    const std::size_t h = s.height, w = s.width, hw = h * w;
    auto in = s.image.data();
    std::vector<Scalar> img(in.size());
    std::vector<std::uint8_t> labels(hw);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t src = y * w + (w - 1 - x), dst = y * w + x;
            labels[dst] = s.labels[src];
            for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + dst] = in[ch * hw + src];
        }
    SegSample out = s;
    out.image = Tensor::from(s.image.shape(), std::move(img));
    out.labels = std::move(labels);
    return out;
}

SegSample rescale(const SegSample& s, double factor) {
    if (!(factor > 0) || !std::isfinite(factor)) throw ConfigError("rescale: factor must be positive");
    const std::size_t h = s.height, w = s.width;
    const auto oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * factor)));
    const auto ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) * factor)));
    const double ry = static_cast<double>(h) / static_cast<double>(oh);
    const double rx = static_cast<double>(w) / static_cast<double>(ow);
    auto in = s.image.data();
    std::vector<Scalar> img(3 * oh * ow);
    std::vector<std::uint8_t> labels(oh * ow);
    for (std::size_t y = 0; y < oh; ++y) {
        const double sy = std::clamp((static_cast<double>(y) + 0.5) * ry - 0.5, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        const std::size_t ly = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * ry));
        for (std::size_t x = 0; x < ow; ++x) {
            const double sx = std::clamp((static_cast<double>(x) + 0.5) * rx - 0.5, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            const std::size_t lx = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * rx));
            labels[y * ow + x] = s.labels[ly * w + lx];
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const Scalar* plane = in.data() + ch * h * w;
                const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
                const double bottom = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
                img[(ch * oh + y) * ow + x] = static_cast<Scalar>(top * (1 - fy) + bottom * fy);
            }
        }
    }
    SegSample out;
    out.image = Tensor::from({3, oh, ow}, std::move(img));
    out.labels = std::move(labels);
    out.height = oh;
    out.width = ow;
    out.id = s.id;
    return out;
}

SegSample crop(const SegSample& s, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw ConfigError("crop: window must be non-empty");
    auto in = s.image.data();
    std::vector<Scalar> img(3 * h * w, Scalar{0});
    std::vector<std::uint8_t> labels(h * w, kIgnoreLabel);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = top + y;
        if (sy >= s.height) break;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = left + x;
            if (sx >= s.width) break;
            labels[y * w + x] = s.labels[sy * s.width + sx];
            for (std::size_t ch = 0; ch < 3; ++ch)
                img[(ch * h + y) * w + x] = in[(ch * s.height + sy) * s.width + sx];
        }
    }
    SegSample out;
    out.image = Tensor::from({3, h, w}, std::move(img));
    out.labels = std::move(labels);
    out.height = h;
    out.width = w;
    out.id = s.id;
    return out;
}

SegSample augment(const SegSample& s, const AugmentSpec& spec, Pcg32& rng) {
    const bool flip = spec.hflip && rng.bernoulli(0.5);
    const double factor = rng.uniform(spec.scale_min, spec.scale_max);
    SegSample cur = flip ? hflip(s) : s;
    if (factor != 1.0) cur = rescale(cur, factor);
    const std::size_t top =
        cur.height > spec.crop_h ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cur.height - spec.crop_h))) : 0;
    const std::size_t left =
        cur.width > spec.crop_w ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cur.width - spec.crop_w))) : 0;
    if (top == 0 && left == 0 && cur.height == spec.crop_h && cur.width == spec.crop_w) return cur;
    return crop(cur, top, left, spec.crop_h, spec.crop_w);
}

std::vector<std::uint64_t> class_census(std::span<const SegSample> samples, std::size_t num_classes) {
    std::vector<std::uint64_t> counts(num_classes, 0);
    for (const auto& s : samples)
        for (auto l : s.labels)
            if (l < num_classes) ++counts[l];
    return counts;
}

std::vector<std::uint64_t> class_presence(std::span<const SegSample> samples, std::size_t num_classes) {
    std::vector<std::uint64_t> counts(num_classes, 0);
    for (const auto& s : samples) {
        std::vector<bool> seen(num_classes, false);
        for (auto l : s.labels)
            if (l < num_classes) seen[l] = true;
        for (std::size_t c = 0; c < num_classes; ++c) counts[c] += seen[c] ? 1 : 0;
    }
    return counts;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    auto os = open_out(path);
    io::Writer wr(os);
    wr.magic("DNLD");
    wr.u32(kDatasetFormatVersion);
    write_spec(wr, ds.spec);
    wr.u64(ds.samples.size());
    for (const auto& s : ds.samples) {
        if (s.image.shape() != Shape{3, s.height, s.width} || s.labels.size() != s.height * s.width) {
            throw DimensionError("save_dataset: sample " + s.id + " has inconsistent extents");
        }
        wr.str(s.id);
        wr.u32(static_cast<std::uint32_t>(s.height));
        wr.u32(static_cast<std::uint32_t>(s.width));
        for (auto v : s.image.data()) wr.f64(static_cast<double>(v));
        wr.bytes(s.labels.data(), s.labels.size());
    }
    os.flush();
    if (!os) throw Error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    io::Reader rd(is);
    rd.expect_magic("DNLD", "dataset");
    const std::uint32_t version = rd.u32();
    if (version != kDatasetFormatVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.spec = read_spec(rd);
    const std::uint64_t count = rd.u64();
    if (count > (std::uint64_t{1} << 32)) throw CorruptionError("dataset: implausible sample count");
    for (std::uint64_t i = 0; i < count; ++i) {
        SegSample s;
        s.id = rd.str(4096);
        s.height = rd.u32();
        s.width = rd.u32();
        if (s.height == 0 || s.width == 0 || s.height * s.width > (std::size_t{1} << 26)) {
            throw CorruptionError("dataset: implausible sample extent in record " + std::to_string(i));
        }
        std::vector<Scalar> img(3 * s.height * s.width);
        for (auto& v : img) v = static_cast<Scalar>(rd.f64());
        s.labels.resize(s.height * s.width);
        rd.bytes(s.labels.data(), s.labels.size());
        for (auto l : s.labels) {
            if (l >= ds.spec.num_classes && l != kIgnoreLabel) {
                throw CorruptionError("dataset: record " + std::to_string(i) + " holds label " + std::to_string(l));
            }
        }
        s.image = Tensor::from({3, s.height, s.width}, std::move(img));
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, std::size_t expected_classes) {
    auto ds = load_dataset(path);
    if (ds.spec.num_classes != expected_classes) {
        throw ConfigError("dataset " + path.string() + " has " + std::to_string(ds.spec.num_classes) +
                          " classes, configuration expects " + std::to_string(expected_classes));
    }
    return ds;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm: expects 3×H×W, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
    auto os = open_out(path);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    auto d = image.data();
    std::vector<std::uint8_t> row(3 * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) row[3 * x + ch] = to_byte(d[ch * hw + y * w + x]);
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw Error("failed writing " + path.string());
}

void write_pgm(const std::filesystem::path& path, std::span<const Scalar> values, std::size_t h, std::size_t w) {
    if (values.size() != h * w) throw DimensionError("write_pgm: value count does not match extents");
    double lo = INFINITY, hi = -INFINITY;
    for (auto v : values) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    auto os = open_out(path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (auto v : values) {
        const std::uint8_t b = hi > lo ? to_byte((static_cast<double>(v) - lo) / (hi - lo)) : 0;
        os.put(static_cast<char>(b));
    }
    if (!os) throw Error("failed writing " + path.string());
}

void write_label_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> labels, std::size_t h,
                     std::size_t w, std::size_t num_classes) {
    if (labels.size() != h * w) throw DimensionError("write_label_pgm: label count does not match extents");
    auto os = open_out(path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    const double step = num_classes > 1 ? 254.0 / static_cast<double>(num_classes - 1) : 0.0;
    for (auto l : labels) {
        const auto b = l == kIgnoreLabel ? std::uint8_t{255} : static_cast<std::uint8_t>(std::lround(l * step));
        os.put(static_cast<char>(b));
    }
    if (!os) throw Error("failed writing " + path.string());
}

}  // namespace dnl
