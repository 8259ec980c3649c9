#include "dnl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

#include "kernels.hpp"

namespace dnl {

using autograd::grad_slot;
using autograd::make_result;

namespace {

thread_local bool t_corrupt_sigmoid = false;
thread_local std::uint64_t t_relu_fingerprint = 0xcbf29ce484222325ULL;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void require_rank(const Tensor& a, std::size_t rank, const char* what) {
    if (a.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(a.shape()));
    }
}

// View of a C×H×W or B×C×H×W tensor as batch, channels, height, width.
struct Nchw {
    std::size_t b, c, h, w;
    bool batched;
};

Nchw as_nchw(const Tensor& x, const char* what) {
    const auto& s = x.shape();
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw DimensionError(std::string(what) + ": expected C×H×W or B×C×H×W, got " + shape_str(s));
}

Shape make_shape(const Nchw& d, std::size_t c, std::size_t h, std::size_t w) {
    if (d.batched) return {d.b, c, h, w};
    return {c, h, w};
}

// Unary pointwise op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Tensor pointwise(const Tensor& a, Fwd fwd, Deriv deriv) {
    auto in = a.data();
    std::vector<Scalar> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    auto result_values = out;  // kept for the adjoint
    return make_result(a.shape(), std::move(out), {a},
                       [a, y = std::move(result_values), deriv](std::span<const Scalar> g) {
                           Scalar* ga = grad_slot(a);
                           if (!ga) return;
                           auto x = a.data();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                       });
}

// Gathers conv input patches of one image into cols[(c·kh+i)·kw+j][oy·ow+ox].
void im2col(const Scalar* x, std::size_t c, std::size_t h, std::size_t w, const ConvSpec& s,
            std::size_t oh, std::size_t ow, Scalar* cols) {
    const auto pad = static_cast<long>(s.padding);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                Scalar* row = cols + ((ch * s.kernel_h + ki) * s.kernel_w + kj) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s.stride + ki * s.dilation) - pad;
                    Scalar* dst = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + ow, Scalar{0});
                        continue;
                    }
                    const Scalar* src = x + (ch * h + static_cast<std::size_t>(iy)) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s.stride + kj * s.dilation) - pad;
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? Scalar{0}
                                                                          : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const Scalar* cols, std::size_t c, std::size_t h, std::size_t w, const ConvSpec& s,
            std::size_t oh, std::size_t ow, Scalar* dx) {
    const auto pad = static_cast<long>(s.padding);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                const Scalar* row = cols + ((ch * s.kernel_h + ki) * s.kernel_w + kj) * oh * ow;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * s.stride + ki * s.dilation) - pad;
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    Scalar* dst = dx + (ch * h + static_cast<std::size_t>(iy)) * w;
                    const Scalar* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * s.stride + kj * s.dilation) - pad;
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

bool is_pointwise_conv(const ConvSpec& s) {
    return s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.padding == 0;
}

}  // namespace

std::size_t kernel_threads() {
    static const std::size_t threads = [] {
        if (const char* env = std::getenv("DNL_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<std::size_t>(v);
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }();
    return threads;
}

std::size_t ConvSpec::output_extent(std::size_t extent, std::size_t kernel) const {
    if (stride == 0 || dilation == 0 || kernel == 0) {
        throw DimensionError("conv spec: stride, dilation and kernel must be positive");
    }
    const long span = static_cast<long>(dilation * (kernel - 1) + 1);
    const long padded = static_cast<long>(extent + 2 * padding);
    if (padded < span) {
        throw DimensionError("conv output size < 1 (extent " + std::to_string(extent) + ", kernel " +
                             std::to_string(kernel) + ", dilation " + std::to_string(dilation) +
                             ", padding " + std::to_string(padding) + ")");
    }
    return static_cast<std::size_t>((padded - span) / static_cast<long>(stride)) + 1;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<Scalar> out(m * n, Scalar{0});
    kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return make_result({m, n}, std::move(out), {a, b}, [a, b, m, n, k](std::span<const Scalar> g) {
        if (Scalar* ga = grad_slot(a)) kernels::gemm_nt(m, k, n, g.data(), b.data().data(), ga);
        if (Scalar* gb = grad_slot(b)) kernels::gemm_tn(k, n, m, a.data().data(), g.data(), gb);
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    auto in = a.data();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
    return make_result({n, m}, std::move(out), {a}, [a, m, n](std::span<const Scalar> g) {
        Scalar* ga = grad_slot(a);
        if (!ga) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    auto in = a.data();
    return make_result(std::move(shape), std::vector<Scalar>(in.begin(), in.end()), {a},
                       [a](std::span<const Scalar> g) {
                           Scalar* ga = grad_slot(a);
                           if (!ga) return;
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       });
}

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op) {
    require_same_shape(a, b, "elementwise");
    auto x = a.data();
    auto y = b.data();
    std::vector<Scalar> out(x.size());
    if (op == ElementwiseOp::Add) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
        return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const Scalar> g) {
            if (Scalar* ga = grad_slot(a))
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (Scalar* gb = grad_slot(b))
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        });
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const Scalar> g) {
        auto x = a.data();
        auto y = b.data();
        if (Scalar* ga = grad_slot(a))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        if (Scalar* gb = grad_slot(b))
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::Add); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::Mul); }

Tensor scale(const Tensor& a, Scalar factor) {
    auto in = a.data();
    std::vector<Scalar> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
    return make_result(a.shape(), std::move(out), {a}, [a, factor](std::span<const Scalar> g) {
        if (Scalar* ga = grad_slot(a))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

Tensor scale(const Tensor& factor, const Tensor& a) {
    if (factor.numel() != 1) {
        throw DimensionError("scale: factor must hold one element, got " + shape_str(factor.shape()));
    }
    const Scalar s = factor.item();
    auto in = a.data();
    std::vector<Scalar> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * s;
    return make_result(a.shape(), std::move(out), {factor, a},
                       [factor, a](std::span<const Scalar> g) {
                           auto x = a.data();
                           if (Scalar* gf = grad_slot(factor)) {
                               Scalar acc = 0;
                               for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                               gf[0] += acc;
                           }
                           if (Scalar* ga = grad_slot(a)) {
                               const Scalar s = factor.item();
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                           }
                       });
}

Tensor sigmoid(const Tensor& a) {
    const Scalar adjoint_scale = t_corrupt_sigmoid ? Scalar{1.5} : Scalar{1};
    return pointwise(
        a,
        [](Scalar x) {
            // Branches keep exp() from overflowing for large |x|. The result is kept
            // strictly inside (0, 1) where rounding would otherwise give 0 or 1.
            constexpr Scalar lo = std::numeric_limits<Scalar>::min();
            constexpr Scalar hi = Scalar{1} - std::numeric_limits<Scalar>::epsilon() / 2;
            Scalar y;
            if (x >= 0) {
                y = Scalar{1} / (Scalar{1} + std::exp(-x));
            } else {
                const Scalar e = std::exp(x);
                y = e / (Scalar{1} + e);
            }
            return std::clamp(y, lo, hi);
        },
        [adjoint_scale](Scalar, Scalar y) { return adjoint_scale * y * (Scalar{1} - y); });
}

Tensor relu(const Tensor& a) {
    auto in = a.data();
    std::vector<Scalar> out(in.size());
    std::uint64_t fp = t_relu_fingerprint;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const bool on = in[i] > Scalar{0};
        out[i] = on ? in[i] : Scalar{0};
        fp = (fp ^ static_cast<std::uint64_t>(on)) * 0x100000001b3ULL;
    }
    t_relu_fingerprint = fp;
    return make_result(a.shape(), std::move(out), {a}, [a](std::span<const Scalar> g) {
        Scalar* ga = grad_slot(a);
        if (!ga) return;
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > Scalar{0}) ga[i] += g[i];
    });
}

Tensor sum(const Tensor& a) {
    Scalar acc = 0;
    for (Scalar v : a.data()) acc += v;
    return make_result({1}, {acc}, {a}, [a](std::span<const Scalar> g) {
        Scalar* ga = grad_slot(a);
        if (!ga) return;
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
    });
}

Tensor softmax_rows(const Tensor& a) {
    require_rank(a, 2, "softmax_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    auto in = a.data();
    std::vector<Scalar> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* row = in.data() + i * n;
        Scalar* dst = out.data() + i * n;
        const Scalar mx = *std::max_element(row, row + n);
        Scalar total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            dst[j] = std::exp(row[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
    }
    auto y = out;
    return make_result({m, n}, std::move(out), {a},
                       [a, y = std::move(y), m, n](std::span<const Scalar> g) {
                           Scalar* ga = grad_slot(a);
                           if (!ga) return;
                           for (std::size_t i = 0; i < m; ++i) {
                               const Scalar* yr = y.data() + i * n;
                               const Scalar* gr = g.data() + i * n;
                               Scalar dot = 0;
                               for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                               for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += yr[j] * (gr[j] - dot);
                           }
                       });
}

Tensor global_avg_pool(const Tensor& x) {
    const auto d = as_nchw(x, "global_avg_pool");
    const std::size_t hw = d.h * d.w;
    if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent");
    auto in = x.data();
    std::vector<Scalar> out(d.b * d.c);
    for (std::size_t i = 0; i < d.b * d.c; ++i) {
        Scalar acc = 0;
        for (std::size_t p = 0; p < hw; ++p) acc += in[i * hw + p];
        out[i] = acc / static_cast<Scalar>(hw);
    }
    return make_result(make_shape(d, d.c, 1, 1), std::move(out), {x},
                       [x, d, hw](std::span<const Scalar> g) {
                           Scalar* gx = grad_slot(x);
                           if (!gx) return;
                           const Scalar inv = Scalar{1} / static_cast<Scalar>(hw);
                           for (std::size_t i = 0; i < d.b * d.c; ++i)
                               for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g[i] * inv;
                       });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
    return conv2d(x, w, Tensor(), spec);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec) {
    const auto d = as_nchw(x, "conv2d");
    const Shape expected_w{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
    if (w.shape() != expected_w) {
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " does not match spec " +
                             shape_str(expected_w));
    }
    if (d.c != spec.in_channels) {
        throw DimensionError("conv2d: input has " + std::to_string(d.c) + " channels, spec expects " +
                             std::to_string(spec.in_channels));
    }
    if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()));
    }
    const std::size_t oh = spec.output_height(d.h);
    const std::size_t ow = spec.output_width(d.w);
    const std::size_t ohw = oh * ow;
    const std::size_t patch = spec.in_channels * spec.kernel_h * spec.kernel_w;
    const bool direct = is_pointwise_conv(spec);

    std::vector<Scalar> out(d.b * spec.out_channels * ohw, Scalar{0});
    std::vector<Scalar> cols(direct ? 0 : patch * ohw);
    for (std::size_t b = 0; b < d.b; ++b) {
        const Scalar* xb = x.data().data() + b * d.c * d.h * d.w;
        const Scalar* src = xb;
        if (!direct) {
            im2col(xb, d.c, d.h, d.w, spec, oh, ow, cols.data());
            src = cols.data();
        }
        Scalar* ob = out.data() + b * spec.out_channels * ohw;
        kernels::gemm_nn(spec.out_channels, ohw, patch, w.data().data(), src, ob);
        if (bias.defined()) {
            for (std::size_t co = 0; co < spec.out_channels; ++co) {
                const Scalar bv = bias.data()[co];
                for (std::size_t p = 0; p < ohw; ++p) ob[co * ohw + p] += bv;
            }
        }
    }

    return make_result(
        make_shape(d, spec.out_channels, oh, ow), std::move(out), {x, w, bias},
        [x, w, bias, spec, d, oh, ow, ohw, patch, direct](std::span<const Scalar> g) {
            Scalar* gx = grad_slot(x);
            Scalar* gw = grad_slot(w);
            Scalar* gb = grad_slot(bias);
            std::vector<Scalar> cols(direct ? 0 : patch * ohw);
            std::vector<Scalar> dcols(direct || !gx ? 0 : patch * ohw);
            for (std::size_t b = 0; b < d.b; ++b) {
                const Scalar* gob = g.data() + b * spec.out_channels * ohw;
                const Scalar* xb = x.data().data() + b * d.c * d.h * d.w;
                if (gw) {
                    const Scalar* src = xb;
                    if (!direct) {
                        im2col(xb, d.c, d.h, d.w, spec, oh, ow, cols.data());
                        src = cols.data();
                    }
                    kernels::gemm_nt(spec.out_channels, patch, ohw, gob, src, gw);
                }
                if (gx) {
                    Scalar* gxb = gx + b * d.c * d.h * d.w;
                    if (direct) {
                        kernels::gemm_tn(patch, ohw, spec.out_channels, w.data().data(), gob, gxb);
                    } else {
                        std::fill(dcols.begin(), dcols.end(), Scalar{0});
                        kernels::gemm_tn(patch, ohw, spec.out_channels, w.data().data(), gob,
                                         dcols.data());
                        col2im(dcols.data(), d.c, d.h, d.w, spec, oh, ow, gxb);
                    }
                }
                if (gb) {
                    for (std::size_t co = 0; co < spec.out_channels; ++co) {
                        Scalar acc = 0;
                        for (std::size_t p = 0; p < ohw; ++p) acc += gob[co * ohw + p];
                        gb[co] += acc;
                    }
                }
            }
        });
}

Tensor unfold(const Tensor& x, std::size_t k) {
    if (k == 0 || k % 2 == 0) throw ConfigError("unfold: window size must be odd, got " + std::to_string(k));
    require_rank(x, 3, "unfold");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t n = h * w;
    const std::size_t kk = k * k;
    const long r = static_cast<long>(k / 2);
    // Source index for every output slot; -1 marks zero padding.
    std::vector<long> source(n * c * kk, -1);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            const std::size_t p = y * w + xx;
            for (std::size_t dy = 0; dy < k; ++dy) {
                const long sy = static_cast<long>(y) + static_cast<long>(dy) - r;
                for (std::size_t dx = 0; dx < k; ++dx) {
                    const long sx = static_cast<long>(xx) + static_cast<long>(dx) - r;
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                    const std::size_t u = dy * k + dx;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        source[(p * c + ch) * kk + u] = static_cast<long>((ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx));
                    }
                }
            }
        }
    }
    auto in = x.data();
    std::vector<Scalar> out(source.size(), Scalar{0});
    for (std::size_t i = 0; i < source.size(); ++i)
        if (source[i] >= 0) out[i] = in[static_cast<std::size_t>(source[i])];
    return make_result({n, c, kk}, std::move(out), {x},
                       [x, source = std::move(source)](std::span<const Scalar> g) {
                           Scalar* gx = grad_slot(x);
                           if (!gx) return;
                           for (std::size_t i = 0; i < source.size(); ++i)
                               if (source[i] >= 0) gx[source[i]] += g[i];
                       });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
    if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
    const auto d = as_nchw(x, "upsample_nearest");
    const std::size_t oh = d.h * factor, ow = d.w * factor;
    auto in = x.data();
    std::vector<Scalar> out(d.b * d.c * oh * ow);
    for (std::size_t plane = 0; plane < d.b * d.c; ++plane) {
        const Scalar* src = in.data() + plane * d.h * d.w;
        Scalar* dst = out.data() + plane * oh * ow;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / factor) * d.w + xx / factor];
    }
    return make_result(make_shape(d, d.c, oh, ow), std::move(out), {x},
                       [x, d, factor, oh, ow](std::span<const Scalar> g) {
                           Scalar* gx = grad_slot(x);
                           if (!gx) return;
                           for (std::size_t plane = 0; plane < d.b * d.c; ++plane) {
                               Scalar* dst = gx + plane * d.h * d.w;
                               const Scalar* src = g.data() + plane * oh * ow;
                               for (std::size_t y = 0; y < oh; ++y)
                                   for (std::size_t xx = 0; xx < ow; ++xx)
                                       dst[(y / factor) * d.w + xx / factor] += src[y * ow + xx];
                           }
                       });
}

Tensor broadcast_spatial(const Tensor& x, std::size_t h, std::size_t w) {
    const auto d = as_nchw(x, "broadcast_spatial");
    if (d.h != 1 || d.w != 1) {
        throw DimensionError("broadcast_spatial: expects 1×1 spatial input, got " + shape_str(x.shape()));
    }
    auto in = x.data();
    std::vector<Scalar> out(d.b * d.c * h * w);
    for (std::size_t plane = 0; plane < d.b * d.c; ++plane)
        std::fill(out.begin() + static_cast<long>(plane * h * w),
                  out.begin() + static_cast<long>((plane + 1) * h * w), in[plane]);
    return make_result(make_shape(d, d.c, h, w), std::move(out), {x},
                       [x, d, h, w](std::span<const Scalar> g) {
                           Scalar* gx = grad_slot(x);
                           if (!gx) return;
                           for (std::size_t plane = 0; plane < d.b * d.c; ++plane) {
                               Scalar acc = 0;
                               for (std::size_t p = 0; p < h * w; ++p) acc += g[plane * h * w + p];
                               gx[plane] += acc;
                           }
                       });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_channels: no inputs");
    const auto d0 = as_nchw(parts.front(), "concat_channels");
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        const auto d = as_nchw(p, "concat_channels");
        if (d.batched != d0.batched || d.b != d0.b || d.h != d0.h || d.w != d0.w) {
            throw DimensionError("concat_channels: incompatible " + shape_str(p.shape()) + " and " +
                                 shape_str(parts.front().shape()));
        }
        total_c += d.c;
    }
    const std::size_t hw = d0.h * d0.w;
    std::vector<Scalar> out(d0.b * total_c * hw);
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = as_nchw(p, "concat_channels").c;
        offsets.push_back(offset);
        for (std::size_t b = 0; b < d0.b; ++b) {
            std::copy_n(p.data().data() + b * c * hw, c * hw, out.data() + (b * total_c + offset) * hw);
        }
        offset += c;
    }
    return make_result(make_shape(d0, total_c, d0.h, d0.w), std::move(out), parts,
                       [parts, offsets, total_c, hw, batch = d0.b](std::span<const Scalar> g) {
                           for (std::size_t i = 0; i < parts.size(); ++i) {
                               Scalar* gp = grad_slot(parts[i]);
                               if (!gp) continue;
                               const std::size_t c = parts[i].numel() / (batch * hw);
                               for (std::size_t b = 0; b < batch; ++b) {
                                   const Scalar* src = g.data() + (b * total_c + offsets[i]) * hw;
                                   Scalar* dst = gp + b * c * hw;
                                   for (std::size_t j = 0; j < c * hw; ++j) dst[j] += src[j];
                               }
                           }
                       });
}

Tensor select(const Tensor& x, std::size_t index) {
    if (x.rank() < 2) throw DimensionError("select: rank must be >= 2");
    if (index >= x.dim(0)) throw DimensionError("select: index out of range for " + shape_str(x.shape()));
    Shape shape(x.shape().begin() + 1, x.shape().end());
    const std::size_t stride = shape_numel(shape);
    auto in = x.data().subspan(index * stride, stride);
    return make_result(std::move(shape), std::vector<Scalar>(in.begin(), in.end()), {x},
                       [x, index, stride](std::span<const Scalar> g) {
                           Scalar* gx = grad_slot(x);
                           if (!gx) return;
                           for (std::size_t i = 0; i < stride; ++i) gx[index * stride + i] += g[i];
                       });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("stack: no inputs");
    const Shape& inner = parts.front().shape();
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    const std::size_t stride = shape_numel(inner);
    std::vector<Scalar> out;
    out.reserve(parts.size() * stride);
    for (const auto& p : parts) {
        if (p.shape() != inner) throw DimensionError("stack: shape mismatch " + shape_str(p.shape()));
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return make_result(std::move(shape), std::move(out), parts, [parts, stride](std::span<const Scalar> g) {
        for (std::size_t i = 0; i < parts.size(); ++i) {
            Scalar* gp = grad_slot(parts[i]);
            if (!gp) continue;
            for (std::size_t j = 0; j < stride; ++j) gp[j] += g[i * stride + j];
        }
    });
}

Tensor batch_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  Scalar eps, BatchNormStats* stats_out) {
    const auto d = as_nchw(x, "batch_norm");
    const Shape cshape{d.c};
    if (weight.shape() != cshape || bias.shape() != cshape || running_mean.shape() != cshape ||
        running_var.shape() != cshape) {
        throw DimensionError("batch_norm: parameters must have shape " + shape_str(cshape));
    }
    const std::size_t hw = d.h * d.w;
    const std::size_t count = d.b * hw;
    auto in = x.data();
    std::vector<Scalar> mean(d.c), inv_std(d.c);
    if (training) {
        std::vector<Scalar> var(d.c);
        for (std::size_t c = 0; c < d.c; ++c) {
            Scalar acc = 0;
            for (std::size_t b = 0; b < d.b; ++b)
                for (std::size_t p = 0; p < hw; ++p) acc += in[(b * d.c + c) * hw + p];
            mean[c] = acc / static_cast<Scalar>(count);
            Scalar sq = 0;
            for (std::size_t b = 0; b < d.b; ++b)
                for (std::size_t p = 0; p < hw; ++p) {
                    const Scalar dv = in[(b * d.c + c) * hw + p] - mean[c];
                    sq += dv * dv;
                }
            var[c] = sq / static_cast<Scalar>(count);
            inv_std[c] = Scalar{1} / std::sqrt(var[c] + eps);
        }
        if (stats_out) {
            stats_out->mean = mean;
            stats_out->var.resize(d.c);
            const Scalar correction = count > 1 ? static_cast<Scalar>(count) / static_cast<Scalar>(count - 1) : Scalar{1};
            for (std::size_t c = 0; c < d.c; ++c) stats_out->var[c] = var[c] * correction;
        }
    } else {
        for (std::size_t c = 0; c < d.c; ++c) {
            mean[c] = running_mean.data()[c];
            inv_std[c] = Scalar{1} / std::sqrt(running_var.data()[c] + eps);
        }
    }

    std::vector<Scalar> xhat(in.size());
    std::vector<Scalar> out(in.size());
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t c = 0; c < d.c; ++c) {
            const Scalar gw = weight.data()[c], gb = bias.data()[c];
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t i = (b * d.c + c) * hw + p;
                xhat[i] = (in[i] - mean[c]) * inv_std[c];
                out[i] = gw * xhat[i] + gb;
            }
        }

    return make_result(
        x.shape(), std::move(out), {x, weight, bias},
        [x, weight, bias, d, hw, count, training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](std::span<const Scalar> g) {
            Scalar* gx = grad_slot(x);
            Scalar* gw = grad_slot(weight);
            Scalar* gb = grad_slot(bias);
            for (std::size_t c = 0; c < d.c; ++c) {
                Scalar sum_g = 0, sum_gx = 0;
                for (std::size_t b = 0; b < d.b; ++b)
                    for (std::size_t p = 0; p < hw; ++p) {
                        const std::size_t i = (b * d.c + c) * hw + p;
                        sum_g += g[i];
                        sum_gx += g[i] * xhat[i];
                    }
                if (gw) gw[c] += sum_gx;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                const Scalar wc = weight.data()[c];
                if (training) {
                    // d/dx of w·(x-μ)/σ with μ, σ taken from the batch.
                    const Scalar m = static_cast<Scalar>(count);
                    const Scalar k = wc * inv_std[c] / m;
                    for (std::size_t b = 0; b < d.b; ++b)
                        for (std::size_t p = 0; p < hw; ++p) {
                            const std::size_t i = (b * d.c + c) * hw + p;
                            gx[i] += k * (m * g[i] - sum_g - xhat[i] * sum_gx);
                        }
                } else {
                    for (std::size_t b = 0; b < d.b; ++b)
                        for (std::size_t p = 0; p < hw; ++p) {
                            const std::size_t i = (b * d.c + c) * hw + p;
                            gx[i] += g[i] * wc * inv_std[c];
                        }
                }
            }
        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                     std::uint8_t ignore_label) {
    const auto d = as_nchw(logits, "cross_entropy");
    const std::size_t hw = d.h * d.w;
    if (labels.size() != d.b * hw) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_str(logits.shape()));
    }
    auto in = logits.data();
    std::vector<Scalar> prob(in.size(), Scalar{0});
    Scalar total = 0;
    std::size_t valid = 0;
    for (std::size_t b = 0; b < d.b; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            const std::uint8_t label = labels[b * hw + p];
            if (label == ignore_label) continue;
            if (label >= d.c) {
                throw DataError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(d.c) + ")");
            }
            Scalar mx = in[(b * d.c) * hw + p];
            for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, in[(b * d.c + c) * hw + p]);
            Scalar z = 0;
            for (std::size_t c = 0; c < d.c; ++c) {
                const std::size_t i = (b * d.c + c) * hw + p;
                prob[i] = std::exp(in[i] - mx);
                z += prob[i];
            }
            for (std::size_t c = 0; c < d.c; ++c) prob[(b * d.c + c) * hw + p] /= z;
            total += -(in[(b * d.c + label) * hw + p] - mx - std::log(z));
            ++valid;
        }
    }
    const Scalar loss = valid ? total / static_cast<Scalar>(valid) : Scalar{0};
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    std::vector<std::uint8_t> kept(labels.begin(), labels.end());
    return make_result({1}, {loss}, {logits},
                       [logits, d, hw, valid, ignore_label, prob = std::move(prob),
                        kept = std::move(kept)](std::span<const Scalar> g) {
                           Scalar* gl = grad_slot(logits);
                           if (!gl || valid == 0) return;
                           const Scalar s = g[0] / static_cast<Scalar>(valid);
                           for (std::size_t b = 0; b < d.b; ++b)
                               for (std::size_t p = 0; p < hw; ++p) {
                                   const std::uint8_t label = kept[b * hw + p];
                                   if (label == ignore_label) continue;
                                   for (std::size_t c = 0; c < d.c; ++c) {
                                       const std::size_t i = (b * d.c + c) * hw + p;
                                       gl[i] += s * (prob[i] - (c == label ? Scalar{1} : Scalar{0}));
                                   }
                               }
                       });
}

namespace debug {

void set_corrupt_sigmoid_adjoint(bool enabled) { t_corrupt_sigmoid = enabled; }
bool corrupt_sigmoid_adjoint() { return t_corrupt_sigmoid; }

void reset_relu_fingerprint() { t_relu_fingerprint = 0xcbf29ce484222325ULL; }
std::uint64_t relu_fingerprint() { return t_relu_fingerprint; }

}  // namespace debug

}  // namespace dnl
