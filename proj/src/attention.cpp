#include "dnl/attention.hpp"

#include <cmath>
#include <string>

#include "dnl/ops.hpp"
#include "dnl/random.hpp"

namespace dnl {

using autograd::grad_slot;
using autograd::make_result;

namespace {

Tensor normal_tensor(Shape shape, double stddev, Pcg32& rng) {
    std::vector<Scalar> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(stddev * rng.normal());
    return Tensor::from(std::move(shape), std::move(v), true);
}

ConvSpec pointwise_spec(std::size_t in, std::size_t out) {
    ConvSpec s;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

// Neighbour index table for k×k windows on an h×w grid: nbr[p·k² + u] is the
// flat position of slot u (row-major inside the window) around p, or -1 off-grid.
std::vector<long> window_neighbours(std::size_t h, std::size_t w, std::size_t k) {
    const long r = static_cast<long>(k / 2);
    std::vector<long> nbr(h * w * k * k, -1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx) {
                    const long sy = static_cast<long>(y + dy) - r;
                    const long sx = static_cast<long>(x + dx) - r;
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                    nbr[(y * w + x) * k * k + dy * k + dx] = sy * static_cast<long>(w) + sx;
                }
    return nbr;
}

// logits[p][u] = Σ_c query[p][c] · key_unfolded[p][c][u]
Tensor window_dot(const Tensor& query, const Tensor& key_unfolded) {
    if (query.rank() != 2 || key_unfolded.rank() != 3 || key_unfolded.dim(0) != query.dim(0) ||
        key_unfolded.dim(1) != query.dim(1)) {
        throw DimensionError("local_similarity: query " + shape_str(query.shape()) +
                             " incompatible with unfolded key " + shape_str(key_unfolded.shape()));
    }
    const std::size_t n = query.dim(0), c = query.dim(1), kk = key_unfolded.dim(2);
    auto q = query.data();
    auto kv = key_unfolded.data();
    std::vector<Scalar> out(n * kk, Scalar{0});
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const Scalar qv = q[p * c + ch];
            const Scalar* krow = kv.data() + (p * c + ch) * kk;
            for (std::size_t u = 0; u < kk; ++u) out[p * kk + u] += qv * krow[u];
        }
    return make_result({n, kk}, std::move(out), {query, key_unfolded},
                       [query, key_unfolded, n, c, kk](std::span<const Scalar> g) {
                           Scalar* gq = grad_slot(query);
                           Scalar* gk = grad_slot(key_unfolded);
                           auto q = query.data();
                           auto kv = key_unfolded.data();
                           for (std::size_t p = 0; p < n; ++p)
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                   const std::size_t row = (p * c + ch) * kk;
                                   for (std::size_t u = 0; u < kk; ++u) {
                                       const Scalar gv = g[p * kk + u];
                                       if (gq) gq[p * c + ch] += gv * kv[row + u];
                                       if (gk) gk[row + u] += gv * q[p * c + ch];
                                   }
                               }
                       });
}

}  // namespace

void DenoisedNLConfig::validate() const {
    if (channels == 0) throw ConfigError("channels must be positive");
    if (reduced_channels == 0 || reduced_channels >= channels) {
        throw ConfigError("reduced_channels must satisfy 0 < C' < C (C=" + std::to_string(channels) +
                          ", C'=" + std::to_string(reduced_channels) + ")");
    }
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    if (window == 0 || window % 2 == 0) {
        throw ConfigError("window must be a positive odd integer, got " + std::to_string(window));
    }
    if (!std::isfinite(gamma_init)) throw ConfigError("gamma_init must be finite");
}

DenoisedNLParams DenoisedNLParams::init(const DenoisedNLConfig& cfg, Pcg32& rng) {
    cfg.validate();
    const double std_in = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    DenoisedNLParams p;
    p.query = normal_tensor({cfg.reduced_channels, cfg.channels, 1, 1}, std_in, rng);
    p.key = normal_tensor({cfg.reduced_channels, cfg.channels, 1, 1}, std_in, rng);
    p.value = normal_tensor({cfg.channels, cfg.channels, 1, 1}, std_in, rng);
    p.coarse = normal_tensor({cfg.num_classes, cfg.channels, 1, 1}, std_in, rng);
    p.gamma = Tensor::scalar(static_cast<Scalar>(cfg.gamma_init), true);
    return p;
}

Tensor pairwise_attention(const Tensor& query, const Tensor& key) {
    if (query.rank() != 2 || key.rank() != 2 || query.dim(1) != key.dim(0) || query.dim(0) != key.dim(1)) {
        throw DimensionError("pairwise_attention: Q " + shape_str(query.shape()) + " and K " +
                             shape_str(key.shape()) + " must be N×C' and C'×N");
    }
    return softmax_rows(matmul(query, key));
}

Tensor coarse_predict(const Tensor& features, const Tensor& w) {
    if (features.rank() != 3) throw DimensionError("coarse_predict: features must be C×H×W");
    if (w.rank() != 4) throw DimensionError("coarse_predict: weight must be C_n×C×1×1");
    const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
    const auto logits = conv2d(features, w, pointwise_spec(c, w.dim(0)));
    return reshape(logits, {w.dim(0), n});
}

Tensor global_rectify(const Tensor& coarse_logits) {
    if (coarse_logits.rank() != 2) throw DimensionError("global_rectify: expects C_n×N logits");
    return sigmoid(matmul(transpose(coarse_logits), coarse_logits));
}

Tensor local_similarity(const Tensor& query, const Tensor& key_unfolded) {
    return sigmoid(window_dot(query, key_unfolded));
}

Tensor apply_global_rectify(const Tensor& attention, const Tensor& p_class) {
    return mul(attention, p_class);
}

Tensor local_retention(const Tensor& a_prime, const Tensor& s_l, std::size_t k, std::size_t h,
                       std::size_t w) {
    if (k == 0 || k % 2 == 0) throw ConfigError("local_retention: window must be odd");
    const std::size_t n = h * w;
    const std::size_t kk = k * k;
    if (a_prime.rank() != 2 || a_prime.dim(0) != a_prime.dim(1) || a_prime.dim(1) != n) {
        throw DimensionError("local_retention: attention " + shape_str(a_prime.shape()) +
                             " does not match H·W = " + std::to_string(n));
    }
    if (s_l.shape() != Shape{n, kk}) {
        throw DimensionError("local_retention: S_l " + shape_str(s_l.shape()) + ", expected " +
                             shape_str(Shape{n, kk}));
    }
    const std::size_t queries = a_prime.dim(0);
    auto nbr = window_neighbours(h, w, k);
    auto a = a_prime.data();
    auto s = s_l.data();
    std::vector<Scalar> out(queries * n, Scalar{0});
    for (std::size_t q = 0; q < queries; ++q) {
        const Scalar* arow = a.data() + q * n;
        Scalar* orow = out.data() + q * n;
        for (std::size_t j = 0; j < n; ++j) {
            Scalar acc = 0;
            for (std::size_t u = 0; u < kk; ++u) {
                const long src = nbr[j * kk + u];
                if (src >= 0) acc += s[j * kk + u] * arow[src];
            }
            orow[j] = acc;
        }
    }
    return make_result({queries, n}, std::move(out), {a_prime, s_l},
                       [a_prime, s_l, nbr = std::move(nbr), queries, n, kk](std::span<const Scalar> g) {
                           Scalar* ga = grad_slot(a_prime);
                           Scalar* gs = grad_slot(s_l);
                           auto a = a_prime.data();
                           auto s = s_l.data();
                           for (std::size_t q = 0; q < queries; ++q) {
                               const Scalar* arow = a.data() + q * n;
                               const Scalar* grow = g.data() + q * n;
                               for (std::size_t j = 0; j < n; ++j) {
                                   const Scalar gv = grow[j];
                                   for (std::size_t u = 0; u < kk; ++u) {
                                       const long src = nbr[j * kk + u];
                                       if (src < 0) continue;
                                       if (ga) ga[q * n + static_cast<std::size_t>(src)] += s[j * kk + u] * gv;
                                       if (gs) gs[j * kk + u] += arow[src] * gv;
                                   }
                               }
                           }
                       });
}

Tensor aggregate(const Tensor& a_dprime, const Tensor& value, const Tensor& features,
                 const Tensor& gamma) {
    if (features.rank() != 3) throw DimensionError("aggregate: features must be C×H×W");
    const std::size_t c = features.dim(0), n = features.dim(1) * features.dim(2);
    if (a_dprime.shape() != Shape{n, n} || value.shape() != Shape{n, c}) {
        throw DimensionError("aggregate: A'' " + shape_str(a_dprime.shape()) + ", V " +
                             shape_str(value.shape()) + " incompatible with features " +
                             shape_str(features.shape()));
    }
    const auto context = reshape(transpose(matmul(a_dprime, value)), features.shape());
    return add(scale(gamma, context), features);
}

DenoisedNLOutput denoised_nl_forward(const Tensor& features, const DenoisedNLParams& params,
                                     const DenoisedNLConfig& cfg) {
    cfg.validate();
    if (features.rank() != 3 || features.dim(0) != cfg.channels) {
        throw DimensionError("denoised_nl_forward: features " + shape_str(features.shape()) +
                             " do not have " + std::to_string(cfg.channels) + " channels");
    }
    const std::size_t c = cfg.channels, cr = cfg.reduced_channels;
    const std::size_t h = features.dim(1), w = features.dim(2), n = h * w;

    const auto q_map = conv2d(features, params.query, pointwise_spec(c, cr));
    const auto k_map = conv2d(features, params.key, pointwise_spec(c, cr));
    const auto v_map = conv2d(features, params.value, pointwise_spec(c, c));
    const auto query = transpose(reshape(q_map, {cr, n}));
    const auto key = reshape(k_map, {cr, n});
    const auto value = transpose(reshape(v_map, {c, n}));

    DenoisedNLOutput out;
    auto& st = out.state;
    st.A = pairwise_attention(query, key);

    if (cfg.use_gr) {
        out.coarse_logits = coarse_predict(features, params.coarse);
        Tensor gram_input = out.coarse_logits;
        if (cfg.coarse_softmax) gram_input = transpose(softmax_rows(transpose(gram_input)));
        st.P_class = cfg.force_pclass_ones ? Tensor::full({n, n}, Scalar{1}) : global_rectify(gram_input);
        st.A_prime = apply_global_rectify(st.A, st.P_class);
    } else {
        st.A_prime = st.A;
    }

    if (cfg.use_lr) {
        st.S_l = local_similarity(query, unfold(k_map, cfg.window));
        st.A_dprime = local_retention(st.A_prime, st.S_l, cfg.window, h, w);
    } else {
        st.A_dprime = st.A_prime;
    }

    out.output = aggregate(st.A_dprime, value, features, params.gamma);
    return out;
}

}  // namespace dnl
