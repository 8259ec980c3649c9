#pragma once

// Denoised non-local attention.
//
// Raw pairwise attention A is filtered twice before aggregation:
//   * Global Rectifying: A' = A ⊙ P_class, where P_class = sigmoid(P_coarseᵀ P_coarse)
//     is a soft same-class indicator built from per-pixel class logits.
//   * Local Retention: each query's spatial map A'[q] is smoothed over k×k key
//     windows with pixel-to-neighbour similarities S_l = sigmoid(Q_j · K_nbr).
// The output is F' = γ · (A'' V) + F.
//
// Layout conventions: N = H·W positions in row-major order; Q is N×C', K is C'×N,
// V is N×C. Row q of every attention map is the distribution of query q over keys.

#include <cstddef>

#include "dnl/tensor.hpp"

namespace dnl {

class Pcg32;

struct DenoisedNLConfig {
    std::size_t channels = 64;          // C
    std::size_t reduced_channels = 8;   // C'
    std::size_t num_classes = 4;        // C_n
    std::size_t window = 3;             // k
    double gamma_init = 0.0;

    bool use_gr = true;
    bool use_lr = true;
    bool coarse_softmax = false;     // feed softmax probabilities instead of logits to the Gram product
    bool force_pclass_ones = false;  // debug: replace P_class by ones

    void validate() const;  // throws ConfigError
};

// Learnable tensors of one Denoised NL block. Projections are bias-free 1×1 convs.
struct DenoisedNLParams {
    Tensor query;   // C'×C×1×1
    Tensor key;     // C'×C×1×1
    Tensor value;   // C×C×1×1
    Tensor coarse;  // C_n×C×1×1
    Tensor gamma;   // [1]

    static DenoisedNLParams init(const DenoisedNLConfig& cfg, Pcg32& rng);
};

struct AttentionState {
    Tensor A;         // N×N, raw
    Tensor A_prime;   // N×N, after Global Rectifying
    Tensor A_dprime;  // N×N, after Local Retention
    Tensor P_class;   // N×N (undefined when GR is off)
    Tensor S_l;       // N×k² (undefined when LR is off)
};

// A = softmax_rows(Q·K).
Tensor pairwise_attention(const Tensor& query, const Tensor& key);

// 1×1 conv of F (C×H×W) with w (C_n×C×1×1), reshaped to C_n×N. Raw logits.
Tensor coarse_predict(const Tensor& features, const Tensor& w);

// P_class = sigmoid(P_coarseᵀ · P_coarse), N×N.
Tensor global_rectify(const Tensor& coarse_logits);

// S_l[p][u] = sigmoid(Q_p · K_unfolded[p][:, u]); key_unfolded is N×C'×k².
Tensor local_similarity(const Tensor& query, const Tensor& key_unfolded);

// A' = A ⊙ P_class (no renormalisation).
Tensor apply_global_rectify(const Tensor& attention, const Tensor& p_class);

// A''[q][j] = Σ_u S_l[j][u] · A'[q][neighbour_u(j)], neighbours taken on the H×W
// key grid with zero contribution outside the image.
Tensor local_retention(const Tensor& a_prime, const Tensor& s_l, std::size_t k, std::size_t h,
                       std::size_t w);

// F'_j = γ · Σ_i A''[j][i] V_i + F_j, returned as C×H×W.
Tensor aggregate(const Tensor& a_dprime, const Tensor& value, const Tensor& features,
                 const Tensor& gamma);

struct DenoisedNLOutput {
    Tensor output;         // C×H×W
    AttentionState state;
    Tensor coarse_logits;  // C_n×N (undefined when GR is off)
};

DenoisedNLOutput denoised_nl_forward(const Tensor& features, const DenoisedNLParams& params,
                                     const DenoisedNLConfig& cfg);

}  // namespace dnl
