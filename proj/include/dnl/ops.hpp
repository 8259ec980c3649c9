#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dnl/tensor.hpp"

namespace dnl {

struct ConvSpec {
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t padding = 0;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    // floor((extent + 2*pad - dilation*(k-1) - 1)/stride) + 1; throws DimensionError when < 1.
    std::size_t output_extent(std::size_t extent, std::size_t kernel) const;
    std::size_t output_height(std::size_t h) const { return output_extent(h, kernel_h); }
    std::size_t output_width(std::size_t w) const { return output_extent(w, kernel_w); }
};

enum class ElementwiseOp { Add, Mul };

// 2-D products and layout.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Pointwise. Shapes must match exactly; the only broadcast is scalar * tensor.
Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor scale(const Tensor& factor, const Tensor& a);  // factor is a 1-element tensor
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor global_avg_pool(const Tensor& x);  // [B×]C×H×W -> [B×]C×1×1

// Spatial ops accept C×H×W or B×C×H×W.
Tensor conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvSpec& spec);
Tensor unfold(const Tensor& x, std::size_t k);  // C×H×W -> (H·W)×C×k²
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor broadcast_spatial(const Tensor& x, std::size_t h, std::size_t w);
Tensor concat_channels(const std::vector<Tensor>& parts);

// Batch axis helpers (axis 0).
Tensor select(const Tensor& x, std::size_t index);
Tensor stack(const std::vector<Tensor>& parts);

struct BatchNormStats {
    std::vector<Scalar> mean;
    std::vector<Scalar> var;  // unbiased
};

// Per-channel normalization of B×C×H×W with learnable affine. With training set
// the batch statistics are used (and reported through stats_out when given);
// otherwise running_mean/running_var are used.
Tensor batch_norm(const Tensor& x, const Tensor& weight, const Tensor& bias,
                  const Tensor& running_mean, const Tensor& running_var, bool training,
                  Scalar eps, BatchNormStats* stats_out = nullptr);

// Mean pixelwise cross-entropy of B×C×H×W logits against B·H·W labels; labels
// equal to ignore_label are skipped. Returns 0 (zero gradient) when every pixel
// is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                     std::uint8_t ignore_label = 255);

namespace debug {

// Negative control for gradient checks: scales the sigmoid adjoint by 1.5.
void set_corrupt_sigmoid_adjoint(bool enabled);
bool corrupt_sigmoid_adjoint();

// ReLU activation-pattern fingerprint, used by finite-difference checks to
// reject perturbations that cross a kink.
void reset_relu_fingerprint();
std::uint64_t relu_fingerprint();

}  // namespace debug

// Threads available to kernels: DNL_THREADS if set, else 1.
std::size_t kernel_threads();

}  // namespace dnl
