#pragma once

// Brute-force reference implementations used only by tests. They work on plain
// std::vector<double> with nested loops and share no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "dnl/attention.hpp"
#include "dnl/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec values(const dnl::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline dnl::Tensor random_tensor(dnl::Shape shape, std::mt19937_64& gen, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<dnl::Scalar> v(dnl::shape_numel(shape));
    for (auto& x : v) x = dist(gen);
    return dnl::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
    Vec c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Direct cross-correlation over one C_in×H×W image with zero padding.
inline Vec conv2d(const Vec& x, std::size_t cin, std::size_t h, std::size_t w, const Vec& wt,
                  std::size_t cout, std::size_t k, std::size_t stride, std::size_t dilation,
                  std::size_t pad, std::size_t& oh, std::size_t& ow) {
    oh = (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
    ow = (w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
    Vec y(cout * oh * ow, 0.0);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = static_cast<long>(oy * stride + ky * dilation) - static_cast<long>(pad);
                            const long ix = static_cast<long>(ox * stride + kx * dilation) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            acc += wt[((co * cin + ci) * k + ky) * k + kx] * x[(ci * h + iy) * w + ix];
                        }
                y[(co * oh + oy) * ow + ox] = acc;
            }
    return y;
}

// out[p][c][u]: channel c at window slot u (row-major) around p, zero outside.
inline Vec unfold(const Vec& x, std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
    const long r = static_cast<long>(k / 2);
    Vec out(h * w * c * k * k, 0.0);
    for (std::size_t py = 0; py < h; ++py)
        for (std::size_t px = 0; px < w; ++px)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long y = static_cast<long>(py) + dy, xx = static_cast<long>(px) + dx;
                        const std::size_t u = static_cast<std::size_t>((dy + r) * static_cast<long>(k) + dx + r);
                        double v = 0;
                        if (y >= 0 && xx >= 0 && y < static_cast<long>(h) && xx < static_cast<long>(w))
                            v = x[(ch * h + y) * w + xx];
                        out[((py * w + px) * c + ch) * k * k + u] = v;
                    }
    return out;
}

// A[i][j] = exp(Q_i·K_j) / Σ_j' exp(Q_i·K_j'); q is N×C', k is C'×N.
inline Vec attention(const Vec& q, const Vec& k, std::size_t n, std::size_t cr) {
    Vec a(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec logits(n);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < cr; ++c) s += q[i * cr + c] * k[c * n + j];
            logits[j] = s;
            mx = std::max(mx, s);
        }
        double z = 0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] = std::exp(logits[j] - mx) / z;
    }
    return a;
}

// S[p][u] = sigmoid(Q_p · K at window slot u around p); kmap is C'×H×W.
inline Vec local_similarity(const Vec& q, const Vec& kmap, std::size_t cr, std::size_t h,
                            std::size_t w, std::size_t k) {
    const long r = static_cast<long>(k / 2);
    const std::size_t n = h * w;
    Vec s(n * k * k);
    for (std::size_t py = 0; py < h; ++py)
        for (std::size_t px = 0; px < w; ++px)
            for (long dy = -r; dy <= r; ++dy)
                for (long dx = -r; dx <= r; ++dx) {
                    const long y = static_cast<long>(py) + dy, xx = static_cast<long>(px) + dx;
                    double dot = 0;
                    if (y >= 0 && xx >= 0 && y < static_cast<long>(h) && xx < static_cast<long>(w))
                        for (std::size_t c = 0; c < cr; ++c)
                            dot += q[(py * w + px) * cr + c] * kmap[(c * h + y) * w + xx];
                    const std::size_t u = static_cast<std::size_t>((dy + r) * static_cast<long>(k) + dx + r);
                    s[(py * w + px) * k * k + u] = sigmoid(dot);
                }
    return s;
}

// A''[q][j] = Σ over window slots u of key j: S[j][u] · A'[q][neighbour], brute force.
inline Vec local_retention(const Vec& a, const Vec& s, std::size_t h, std::size_t w, std::size_t k) {
    const long r = static_cast<long>(k / 2);
    const std::size_t n = h * w;
    Vec out(n * n, 0.0);
    for (std::size_t q = 0; q < n; ++q)
        for (std::size_t jy = 0; jy < h; ++jy)
            for (std::size_t jx = 0; jx < w; ++jx) {
                double acc = 0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long y = static_cast<long>(jy) + dy, x = static_cast<long>(jx) + dx;
                        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
                        const std::size_t u = static_cast<std::size_t>((dy + r) * static_cast<long>(k) + dx + r);
                        acc += s[(jy * w + jx) * k * k + u] * a[q * n + static_cast<std::size_t>(y) * w + x];
                    }
                out[q * n + jy * w + jx] = acc;
            }
    return out;
}

// Central finite difference of f with respect to entry i of leaf t.
inline double finite_difference(dnl::Tensor t, std::size_t i, const std::function<double()>& f,
                                double step = 1e-5) {
    auto d = t.mutable_data();
    const dnl::Scalar saved = d[i];
    d[i] = saved + step;
    const double plus = f();
    d[i] = saved - step;
    const double minus = f();
    d[i] = saved;
    return (plus - minus) / (2 * step);
}

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

// 1×1 projection of a C×H×W map through a Cout×C×1×1 weight, as N×Cout rows.
inline Vec project_rows(const Vec& f, const Vec& w, std::size_t c, std::size_t cout,
                         std::size_t n) {
    Vec out(n * cout, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t o = 0; o < cout; ++o) {
            double acc = 0;
            for (std::size_t i = 0; i < c; ++i) acc += w[o * c + i] * f[i * n + p];
            out[p * cout + o] = acc;
        }
    return out;
}

inline Vec transpose_vec(const Vec& a, std::size_t m, std::size_t n) {
    Vec t(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
}

struct ChainOracle {
    Vec A, A1, A2, P, S, out;
};

// Whole Denoised NL block assembled from the nested-loop oracles.
inline ChainOracle chain_oracle(const dnl::Tensor& f, const dnl::DenoisedNLParams& p, const dnl::DenoisedNLConfig& cfg) {
    const std::size_t c = cfg.channels, cr = cfg.reduced_channels, cn = cfg.num_classes;
    const std::size_t h = f.dim(1), w = f.dim(2), n = h * w, k = cfg.window;
    const auto fv = values(f);
    const auto q = project_rows(fv, values(p.query), c, cr, n);     // N×C'
    const auto kr = project_rows(fv, values(p.key), c, cr, n);      // N×C'
    const auto v = project_rows(fv, values(p.value), c, c, n);      // N×C
    const auto coarse = project_rows(fv, values(p.coarse), c, cn, n);  // N×C_n
    const auto kmat = transpose_vec(kr, n, cr);                              // C'×N, also C'×H×W
    ChainOracle o;
    o.A = attention(q, kmat, n, cr);
    o.P.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0;
            for (std::size_t cc = 0; cc < cn; ++cc) dot += coarse[i * cn + cc] * coarse[j * cn + cc];
            o.P[i * n + j] = sigmoid(dot);
        }
    o.A1.resize(n * n);
    for (std::size_t i = 0; i < n * n; ++i) o.A1[i] = o.A[i] * o.P[i];
    o.S = local_similarity(q, kmat, cr, h, w, k);
    o.A2 = local_retention(o.A1, o.S, h, w, k);
    const double gamma = p.gamma.item();
    o.out.resize(c * n);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += o.A2[j * n + i] * v[i * c + ch];
            o.out[ch * n + j] = gamma * acc + fv[ch * n + j];
        }
    return o;
}

inline dnl::DenoisedNLParams random_params(const dnl::DenoisedNLConfig& cfg, std::mt19937_64& gen, double gamma) {
    dnl::DenoisedNLParams p;
    p.query = random_tensor({cfg.reduced_channels, cfg.channels, 1, 1}, gen, -1, 1, true);
    p.key = random_tensor({cfg.reduced_channels, cfg.channels, 1, 1}, gen, -1, 1, true);
    p.value = random_tensor({cfg.channels, cfg.channels, 1, 1}, gen, -1, 1, true);
    p.coarse = random_tensor({cfg.num_classes, cfg.channels, 1, 1}, gen, -1, 1, true);
    p.gamma = dnl::Tensor::scalar(gamma, true);
    return p;
}

}  // namespace oracle
