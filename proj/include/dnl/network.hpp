#pragma once

// Segmentation network around the Denoised NL block: a four-stage conv stem
// (taps res2, res3), a Reduction block down to stride 16, the attention block,
// a global-context branch and a conv head, plus two auxiliary 1×1 heads.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dnl/attention.hpp"
#include "dnl/ops.hpp"
#include "dnl/tensor.hpp"

namespace dnl {

struct NetConfig {
    std::size_t image_channels = 3;
    std::vector<std::size_t> stem_widths{16, 32, 64, 64};
    std::size_t channels = 64;          // C, output of the Reduction block
    std::size_t reduced_channels = 8;   // C'
    std::size_t num_classes = 4;        // C_n
    std::size_t window = 3;             // k
    double gamma_init = 0.0;
    std::size_t head_channels = 64;
    std::size_t ctx_channels = 64;
    double norm_eps = 1e-5;
    double norm_momentum = 0.1;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda_gr = 0.4;
    bool use_attention = true;
    bool use_gr = true;
    bool use_lr = true;
    bool coarse_softmax = false;
    bool force_pclass_ones = false;

    void validate() const;  // throws ConfigError
    DenoisedNLConfig attention_config() const;
    std::size_t backbone_channels() const { return stem_widths.back(); }  // C_b
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Learnable tensors in a fixed order, plus non-learnable buffers (running
// normalization statistics).
class ModelParams {
public:
    static ModelParams init(const NetConfig& cfg, std::uint64_t seed);

    void add_param(std::string name, Tensor t);
    void add_buffer(std::string name, Tensor t);

    const std::vector<NamedTensor>& params() const { return params_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;  // param or buffer

    std::size_t param_count() const;  // total scalar count of learnable tensors
    void zero_grad();

    // Deep copy; the copy shares no storage with the original.
    ModelParams clone() const;

private:
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
    std::map<std::string, std::pair<bool, std::size_t>> index_;
};

// Parameter census predicted from the architecture alone.
std::size_t expected_param_count(const NetConfig& cfg);

// Normalization statistics of one batch, keyed by normalization layer prefix.
struct NormUpdate {
    std::string prefix;
    BatchNormStats stats;
};

struct ForwardMode {
    bool training = false;
    std::vector<NormUpdate>* norm_updates = nullptr;  // filled in training mode when set
};

// Applies running = (1 − m)·running + m·batch to every reported layer.
void apply_norm_updates(ModelParams& params, const std::vector<NormUpdate>& updates, double momentum);

struct StemOutput {
    Tensor x;     // [B×]C_b×H/8×W/8
    Tensor res2;  // [B×]w1×H/4×W/4
    Tensor res3;  // [B×]w2×H/8×W/8
};

// Inputs may be C×H×W or B×C×H×W; outputs keep the input's batching.
StemOutput stem_forward(const Tensor& img, const ModelParams& params, const NetConfig& cfg,
                        const ForwardMode& mode = {});
Tensor reduction_forward(const Tensor& x, const ModelParams& params, const NetConfig& cfg,
                         const ForwardMode& mode = {});
Tensor head_forward(const Tensor& x, const Tensor& f_prime, const ModelParams& params,
                    const NetConfig& cfg, const ForwardMode& mode = {});

struct ModelOutput {
    Tensor logits;         // B×C_n×H/8×W/8
    Tensor aux2;           // B×C_n×H/4×W/4
    Tensor aux3;           // B×C_n×H/8×W/8
    Tensor coarse_logits;  // B×C_n×H/16×W/16, undefined without GR
    std::vector<AttentionState> states;  // one per batch item, empty without attention
};

ModelOutput model_forward(const Tensor& img, const ModelParams& params, const NetConfig& cfg,
                          const ForwardMode& mode = {});

struct LossTerms {
    Tensor total;
    double lp = 0, l1 = 0, l2 = 0, lgr = 0;
};

// L = L_p + λ1·L_1 + λ2·L_2 + λ_gr·L_gr. Every logit map is upsampled (nearest)
// to the label resolution label_h×label_w; labels hold B·label_h·label_w entries.
LossTerms joint_loss(const ModelOutput& out, std::span<const std::uint8_t> labels, std::size_t label_h,
                     std::size_t label_w, double lambda1, double lambda2, double lambda_gr);
LossTerms joint_loss(const ModelOutput& out, std::span<const std::uint8_t> labels, std::size_t label_h,
                     std::size_t label_w, const NetConfig& cfg);

// Nearest-neighbour upsampling of B×C×h×w logits to B×C×H×W (H, W multiples of h, w).
Tensor upsample_to(const Tensor& logits, std::size_t h, std::size_t w);

struct FlopEntry {
    std::string block;
    std::uint64_t macs = 0;
};

struct FlopReport {
    std::vector<FlopEntry> blocks;
    std::uint64_t attention_core_macs = 0;  // Q·K and A''·V
    std::uint64_t module_macs = 0;          // everything the attention block adds
    std::uint64_t total_macs = 0;
    std::uint64_t attention_map_bytes = 0;  // N×N maps and S_l at the element width
    std::size_t positions = 0;              // N at stride 16

    std::uint64_t macs(const std::string& block) const;  // 0 when absent
};

FlopReport count_flops(const NetConfig& cfg, std::size_t height, std::size_t width);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    std::string config_text;  // canonical experiment config echo
    std::uint64_t iteration = 0;
    ModelParams params;
    std::vector<NamedTensor> velocity;  // optimizer state, may be empty
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dnl
