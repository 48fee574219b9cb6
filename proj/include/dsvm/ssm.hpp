#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace dsvm::ssm {

// State-space parameters for one scan group. The state matrix is diagonal per
// inner channel and stored as A = -exp(a_log), so every entry is negative.
struct SSMParams {
    torch::Tensor a_log;       // [D, N]
    torch::Tensor d_skip;      // [D]
    torch::Tensor delta_bias;  // [D], consumed by the block's step-size projection

    int64_t inner_dim() const { return a_log.size(0); }
    int64_t state_dim() const { return a_log.size(1); }
    torch::Tensor state_matrix() const { return -torch::exp(a_log); }

    void validate() const;
};

// One input sequence for the selective scan. `delta` must be strictly positive.
struct ScanInput {
    torch::Tensor u;      // [L, D]
    torch::Tensor delta;  // [L, D]
    torch::Tensor b;      // [L, N]
    torch::Tensor c;      // [L, N]

    int64_t length() const { return u.size(0); }

    void validate(const SSMParams& params) const;
};

struct ScanResult {
    torch::Tensor y;           // [L, D]
    torch::Tensor last_state;  // [D, N]
};

// Literal zero-order-hold recurrence, evaluated one step at a time in extended
// precision:
//   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
//   y_t = C_t . h_t + d_skip * u_t
// Output is double. Not differentiable; used as the reference.
torch::Tensor selective_scan_sequential(const ScanInput& input, const SSMParams& params);
ScanResult selective_scan_sequential(const ScanInput& input, const SSMParams& params,
                                     const torch::Tensor& initial_state);

// Same recurrence through the batched kernel. Differentiable w.r.t. u, delta,
// b, c, a_log and d_skip; computes in the dtype of `input.u`.
torch::Tensor selective_scan(const ScanInput& input, const SSMParams& params);
ScanResult selective_scan(const ScanInput& input, const SSMParams& params,
                          const torch::Tensor& initial_state);

// Batched, grouped scan used by the vision blocks.
//   u, delta: [Bt, G, D, L]   a: [G, D, N] (already negative)
//   b, c:     [Bt, G, N, L]   d_skip: [G, D] or undefined
//   initial_state: [Bt, G, D, N] or undefined (zeros)
// Returns {y [Bt, G, D, L], last_state [Bt, G, D, N]}. last_state carries no
// gradient. Autograd-aware.
std::pair<torch::Tensor, torch::Tensor> grouped_scan(const torch::Tensor& u,
                                                     const torch::Tensor& delta,
                                                     const torch::Tensor& a,
                                                     const torch::Tensor& b,
                                                     const torch::Tensor& c,
                                                     const torch::Tensor& d_skip,
                                                     const torch::Tensor& initial_state = {});

inline constexpr int64_t kScanDirections = 4;

// Flattens x [Bt, C, H, W] into four traversals [Bt, 4, C, H*W]:
// 0 row-major, 1 column-major, 2 reversed row-major, 3 reversed column-major.
torch::Tensor cross_scan(const torch::Tensor& x);

// Inverse of cross_scan: maps each traversal back to grid order and sums.
// seqs [Bt, 4, C, H*W] -> [Bt, C, H, W].
torch::Tensor cross_merge(const torch::Tensor& seqs, int64_t height, int64_t width);

struct VSSBlockOptions {
    VSSBlockOptions(int64_t dim) : dim_(dim) {}

    int64_t inner_dim() const { return dim_ * expand_; }
    int64_t resolved_dt_rank() const { return dt_rank_ > 0 ? dt_rank_ : (dim_ + 15) / 16; }

    TORCH_ARG(int64_t, dim);
    TORCH_ARG(int64_t, state_dim) = 16;
    TORCH_ARG(int64_t, expand) = 2;
    // 0 selects ceil(dim / 16).
    TORCH_ARG(int64_t, dt_rank) = 0;
    TORCH_ARG(double, dt_min) = 1e-3;
    TORCH_ARG(double, dt_max) = 0.1;
    TORCH_ARG(double, dt_init_floor) = 1e-4;
};

// Vision state-space block on channels-last tokens [Bt, H, W, C]:
//   norm -> expand(x, z) -> depthwise 3x3 conv -> SiLU -> 4-direction scan
//   -> norm -> gate by SiLU(z) -> project back -> residual add.
class VSSBlockImpl : public torch::nn::Module {
public:
    explicit VSSBlockImpl(const VSSBlockOptions& options);

    torch::Tensor forward(const torch::Tensor& x);

    // Parameters of scan direction k as a single-group SSMParams view.
    SSMParams direction_params(int64_t k) const;

    const VSSBlockOptions& options() const { return options_; }

    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear in_proj{nullptr};
    torch::nn::Conv2d conv{nullptr};
    torch::Tensor x_proj_weight;   // [4, R + 2N, E*C]
    torch::Tensor dt_proj_weight;  // [4, E*C, R]
    torch::Tensor dt_bias;         // [4, E*C]
    torch::Tensor a_log;           // [4, E*C, N]
    torch::Tensor d_skip;          // [4, E*C]
    torch::nn::LayerNorm out_norm{nullptr};
    torch::nn::Linear out_proj{nullptr};

private:
    VSSBlockOptions options_;
};
TORCH_MODULE(VSSBlock);

}  // namespace dsvm::ssm
