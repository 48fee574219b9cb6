#include "dsvm/ssm.hpp"

#include "dsvm/error.hpp"

#include <cmath>
#include <vector>

namespace dsvm::ssm {

void SSMParams::validate() const {
    require(a_log.defined() && a_log.dim() == 2, "SSMParams: a_log must be [D, N]");
    require(a_log.size(0) >= 1 && a_log.size(1) >= 1, "SSMParams: D and N must be >= 1");
    require(torch::isfinite(a_log).all().item<bool>(), "SSMParams: a_log must be finite");
    if (d_skip.defined()) {
        require(d_skip.dim() == 1 && d_skip.size(0) == a_log.size(0),
                "SSMParams: d_skip must be [D]");
    }
    if (delta_bias.defined()) {
        require(delta_bias.dim() == 1 && delta_bias.size(0) == a_log.size(0),
                "SSMParams: delta_bias must be [D]");
    }
}

void ScanInput::validate(const SSMParams& params) const {
    params.validate();
    const int64_t D = params.inner_dim();
    const int64_t N = params.state_dim();
    require(u.defined() && u.dim() == 2 && u.size(1) == D, "ScanInput: u must be [L, D]");
    const int64_t L = u.size(0);
    require(L >= 1, "ScanInput: sequence length must be >= 1");
    require(delta.defined() && delta.dim() == 2 && delta.size(0) == L && delta.size(1) == D,
            "ScanInput: delta must be [L, D] with the same length as u");
    require(b.defined() && b.dim() == 2 && b.size(0) == L && b.size(1) == N,
            "ScanInput: B must be [L, N] with the same length as u");
    require(c.defined() && c.dim() == 2 && c.size(0) == L && c.size(1) == N,
            "ScanInput: C must be [L, N] with the same length as u");
    require((delta > 0).all().item<bool>(), "ScanInput: delta must be strictly positive");
}

ScanResult selective_scan_sequential(const ScanInput& input, const SSMParams& params,
                                     const torch::Tensor& initial_state) {
    input.validate(params);
    const int64_t L = input.length();
    const int64_t D = params.inner_dim();
    const int64_t N = params.state_dim();

    auto to_d = [](const torch::Tensor& t) { return t.detach().to(torch::kDouble).contiguous(); };
    auto u = to_d(input.u);
    auto delta = to_d(input.delta);
    auto b = to_d(input.b);
    auto c = to_d(input.c);
    auto a = to_d(params.state_matrix());
    auto skip = params.d_skip.defined() ? to_d(params.d_skip) : torch::zeros({D}, torch::kDouble);

    auto ua = u.accessor<double, 2>();
    auto da = delta.accessor<double, 2>();
    auto ba = b.accessor<double, 2>();
    auto ca = c.accessor<double, 2>();
    auto aa = a.accessor<double, 2>();
    auto sa = skip.accessor<double, 1>();

    std::vector<long double> h(static_cast<size_t>(D * N), 0.0L);
    if (initial_state.defined()) {
        require(initial_state.dim() == 2 && initial_state.size(0) == D &&
                    initial_state.size(1) == N,
                "selective_scan_sequential: initial state must be [D, N]");
        auto h0 = to_d(initial_state);
        auto h0a = h0.accessor<double, 2>();
        for (int64_t d = 0; d < D; ++d)
            for (int64_t n = 0; n < N; ++n) h[d * N + n] = h0a[d][n];
    }

    auto y = torch::zeros({L, D}, torch::kDouble);
    auto ya = y.accessor<double, 2>();
    for (int64_t t = 0; t < L; ++t) {
        for (int64_t d = 0; d < D; ++d) {
            long double out = 0.0L;
            for (int64_t n = 0; n < N; ++n) {
                const long double decay = std::exp(static_cast<long double>(da[t][d]) * aa[d][n]);
                long double& hn = h[d * N + n];
                hn = decay * hn + static_cast<long double>(da[t][d]) * ba[t][n] * ua[t][d];
                out += static_cast<long double>(ca[t][n]) * hn;
            }
            ya[t][d] = static_cast<double>(out + static_cast<long double>(sa[d]) * ua[t][d]);
        }
    }

    auto last = torch::empty({D, N}, torch::kDouble);
    auto la = last.accessor<double, 2>();
    for (int64_t d = 0; d < D; ++d)
        for (int64_t n = 0; n < N; ++n) la[d][n] = static_cast<double>(h[d * N + n]);
    return {y, last};
}

torch::Tensor selective_scan_sequential(const ScanInput& input, const SSMParams& params) {
    return selective_scan_sequential(input, params, torch::Tensor()).y;
}

ScanResult selective_scan(const ScanInput& input, const SSMParams& params,
                          const torch::Tensor& initial_state) {
    input.validate(params);
    const auto dtype = input.u.scalar_type();
    // [L, D] -> [1, 1, D, L]; [L, N] -> [1, 1, N, L]
    auto seq = [dtype](const torch::Tensor& t) { return t.to(dtype).t().unsqueeze(0).unsqueeze(0); };
    auto a = params.state_matrix().to(dtype).unsqueeze(0);
    auto skip = params.d_skip.defined() ? params.d_skip.to(dtype).unsqueeze(0) : torch::Tensor();
    torch::Tensor h0;
    if (initial_state.defined()) {
        require(initial_state.dim() == 2 && initial_state.size(0) == params.inner_dim() &&
                    initial_state.size(1) == params.state_dim(),
                "selective_scan: initial state must be [D, N]");
        h0 = initial_state.to(dtype).unsqueeze(0).unsqueeze(0);
    }
    auto [y, last] = grouped_scan(seq(input.u), seq(input.delta), a, seq(input.b), seq(input.c),
                                  skip, h0);
    return {y.squeeze(0).squeeze(0).t(), last.squeeze(0).squeeze(0)};
}

torch::Tensor selective_scan(const ScanInput& input, const SSMParams& params) {
    return selective_scan(input, params, torch::Tensor()).y;
}

torch::Tensor cross_scan(const torch::Tensor& x) {
    require(x.dim() == 4, "cross_scan: expected [Bt, C, H, W]");
    require(x.size(2) >= 1 && x.size(3) >= 1, "cross_scan: H and W must be >= 1");
    auto row_major = x.flatten(2);
    auto col_major = x.transpose(2, 3).flatten(2);
    auto fwd = torch::stack({row_major, col_major}, 1);
    return torch::cat({fwd, fwd.flip({-1})}, 1);
}

torch::Tensor cross_merge(const torch::Tensor& seqs, int64_t height, int64_t width) {
    require(seqs.dim() == 4 && seqs.size(1) == kScanDirections,
            "cross_merge: expected [Bt, 4, C, H*W]");
    require(height >= 1 && width >= 1, "cross_merge: H and W must be >= 1");
    require(seqs.size(3) == height * width, "cross_merge: sequence length must equal H*W");
    const int64_t batch = seqs.size(0);
    const int64_t channels = seqs.size(2);
    // Undo the reversals first, then the transposition.
    auto fwd = seqs.narrow(1, 0, 2) + seqs.narrow(1, 2, 2).flip({-1});
    auto row = fwd.select(1, 0);
    auto col = fwd.select(1, 1)
                   .reshape({batch, channels, width, height})
                   .transpose(2, 3)
                   .reshape({batch, channels, height * width});
    return (row + col).reshape({batch, channels, height, width});
}

VSSBlockImpl::VSSBlockImpl(const VSSBlockOptions& options) : options_(options) {
    const int64_t dim = options.dim();
    const int64_t inner = options.inner_dim();
    const int64_t rank = options.resolved_dt_rank();
    const int64_t state = options.state_dim();
    require_config(dim >= 1 && options.expand() >= 1 && state >= 1, "VSSBlock: invalid options");

    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    in_proj = register_module(
        "in_proj", torch::nn::Linear(torch::nn::LinearOptions(dim, 2 * inner).bias(false)));
    conv = register_module(
        "conv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(inner, inner, 3).padding(1).groups(inner).bias(true)));

    torch::NoGradGuard no_grad;
    const double proj_bound = 1.0 / std::sqrt(static_cast<double>(inner));
    x_proj_weight = register_parameter(
        "x_proj_weight",
        torch::empty({kScanDirections, rank + 2 * state, inner}).uniform_(-proj_bound, proj_bound));

    const double dt_bound = 1.0 / std::sqrt(static_cast<double>(rank));
    dt_proj_weight = register_parameter(
        "dt_proj_weight", torch::empty({kScanDirections, inner, rank}).uniform_(-dt_bound, dt_bound));

    // Step sizes start log-uniform in [dt_min, dt_max]; the bias is the inverse
    // softplus of that draw.
    auto dt = torch::exp(torch::rand({kScanDirections, inner}) *
                             (std::log(options.dt_max()) - std::log(options.dt_min())) +
                         std::log(options.dt_min()))
                  .clamp_min(options.dt_init_floor());
    dt_bias = register_parameter("dt_bias", dt + torch::log(-torch::expm1(-dt)));

    a_log = register_parameter(
        "a_log", torch::log(torch::arange(1, state + 1, torch::kFloat))
                     .repeat({kScanDirections, inner, 1})
                     .contiguous());
    d_skip = register_parameter("d_skip", torch::ones({kScanDirections, inner}));

    out_norm =
        register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({inner})));
    out_proj = register_module(
        "out_proj", torch::nn::Linear(torch::nn::LinearOptions(inner, dim).bias(false)));
}

SSMParams VSSBlockImpl::direction_params(int64_t k) const {
    require(k >= 0 && k < kScanDirections, "VSSBlock: direction index out of range");
    return SSMParams{a_log[k], d_skip[k], dt_bias[k]};
}

torch::Tensor VSSBlockImpl::forward(const torch::Tensor& x) {
    require(x.dim() == 4 && x.size(3) == options_.dim(), "VSSBlock: expected tokens [Bt, H, W, C]");
    require(torch::isfinite(x).all().item<bool>(), "VSSBlock: non-finite input");
    const int64_t height = x.size(1);
    const int64_t width = x.size(2);
    const int64_t rank = options_.resolved_dt_rank();
    const int64_t state = options_.state_dim();

    auto xz = in_proj(norm(x));
    auto parts = xz.chunk(2, -1);
    auto z = parts[1];
    auto xs = torch::silu(conv(parts[0].permute({0, 3, 1, 2})));

    auto seqs = cross_scan(xs);  // [Bt, 4, E*C, L]
    auto x_dbl = torch::einsum("bkdl,kcd->bkcl", {seqs, x_proj_weight});
    auto dts = x_dbl.narrow(2, 0, rank);
    auto bs = x_dbl.narrow(2, rank, state);
    auto cs = x_dbl.narrow(2, rank + state, state);
    dts = torch::einsum("bkrl,kdr->bkdl", {dts, dt_proj_weight});
    auto delta = torch::softplus(dts + dt_bias.unsqueeze(0).unsqueeze(-1));

    auto a = -torch::exp(a_log);
    auto ys = grouped_scan(seqs.contiguous(), delta.contiguous(), a, bs, cs, d_skip).first;
    auto merged = cross_merge(ys, height, width);  // [Bt, E*C, H, W]

    auto y = out_norm(merged.permute({0, 2, 3, 1}));
    y = y * torch::silu(z);
    return x + out_proj(y);
}

}  // namespace dsvm::ssm
