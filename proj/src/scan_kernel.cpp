#include "dsvm/error.hpp"
#include "dsvm/ssm.hpp"

#include <torch/torch.h>

#include <cmath>
#include <vector>

namespace dsvm::ssm {
namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

struct ScanShape {
    int64_t batch, groups, inner, length, state;
};

ScanShape check_shapes(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& a,
                       const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d_skip,
                       const torch::Tensor& h0) {
    require(u.dim() == 4, "grouped_scan: u must be [Bt, G, D, L]");
    ScanShape s{u.size(0), u.size(1), u.size(2), u.size(3), a.size(-1)};
    require(u.is_floating_point(), "grouped_scan: floating-point input required");
    require(s.length >= 1, "grouped_scan: sequence length must be >= 1");
    require(delta.sizes() == u.sizes(), "grouped_scan: delta shape must match u");
    require(a.dim() == 3 && a.size(0) == s.groups && a.size(1) == s.inner,
            "grouped_scan: A must be [G, D, N]");
    require(b.dim() == 4 && b.size(0) == s.batch && b.size(1) == s.groups && b.size(2) == s.state &&
                b.size(3) == s.length,
            "grouped_scan: B must be [Bt, G, N, L]");
    require(c.sizes() == b.sizes(), "grouped_scan: C shape must match B");
    if (d_skip.numel() > 0) {
        require(d_skip.dim() == 2 && d_skip.size(0) == s.groups && d_skip.size(1) == s.inner,
                "grouped_scan: d_skip must be [G, D]");
    }
    if (h0.numel() > 0) {
        require(h0.dim() == 4 && h0.size(0) == s.batch && h0.size(1) == s.groups &&
                    h0.size(2) == s.inner && h0.size(3) == s.state,
                "grouped_scan: initial state must be [Bt, G, D, N]");
    }
    return s;
}

// Forward pass. `states` receives h_t for every step, laid out [Bt, G, D, L, N].
template <typename T>
void scan_forward(const ScanShape& s, const T* u, const T* delta, const T* a, const T* b_tn,
                  const T* c_tn, const T* d_skip, const T* h0, T* y, T* states, T* last) {
    const int64_t L = s.length, N = s.state, D = s.inner;
    std::vector<T> h(N);
    for (int64_t bt = 0; bt < s.batch; ++bt) {
        for (int64_t g = 0; g < s.groups; ++g) {
            const int64_t bg = bt * s.groups + g;
            const T* bs = b_tn + bg * L * N;
            const T* cs = c_tn + bg * L * N;
            for (int64_t d = 0; d < D; ++d) {
                const int64_t row = bg * D + d;
                const T* ud = u + row * L;
                const T* dd = delta + row * L;
                const T* ad = a + (g * D + d) * N;
                const T skip = d_skip ? d_skip[g * D + d] : T(0);
                T* yd = y + row * L;
                T* hs = states + row * L * N;
                if (h0) {
                    std::copy_n(h0 + row * N, N, h.begin());
                } else {
                    std::fill(h.begin(), h.end(), T(0));
                }
                for (int64_t t = 0; t < L; ++t) {
                    const T dt = dd[t];
                    const T du = dt * ud[t];
                    const T* bt_ = bs + t * N;
                    const T* ct_ = cs + t * N;
                    T acc = 0;
                    for (int64_t n = 0; n < N; ++n) {
                        h[n] = std::exp(dt * ad[n]) * h[n] + bt_[n] * du;
                        acc += ct_[n] * h[n];
                    }
                    std::copy_n(h.begin(), N, hs + t * N);
                    yd[t] = acc + skip * ud[t];
                }
                std::copy_n(h.begin(), N, last + row * N);
            }
        }
    }
}

template <typename T>
void scan_backward(const ScanShape& s, const T* u, const T* delta, const T* a, const T* b_tn,
                   const T* c_tn, const T* d_skip, const T* h0, const T* states, const T* gy,
                   T* gu, T* gdelta, T* ga, T* gb_tn, T* gc_tn, T* gd_skip) {
    const int64_t L = s.length, N = s.state, D = s.inner;
    std::vector<T> gh(N);
    std::vector<T> zeros(N, T(0));
    for (int64_t bt = 0; bt < s.batch; ++bt) {
        for (int64_t g = 0; g < s.groups; ++g) {
            const int64_t bg = bt * s.groups + g;
            const T* bs = b_tn + bg * L * N;
            const T* cs = c_tn + bg * L * N;
            T* gbs = gb_tn + bg * L * N;
            T* gcs = gc_tn + bg * L * N;
            for (int64_t d = 0; d < D; ++d) {
                const int64_t row = bg * D + d;
                const T* ud = u + row * L;
                const T* dd = delta + row * L;
                const T* ad = a + (g * D + d) * N;
                T* gad = ga + (g * D + d) * N;
                const T* hs = states + row * L * N;
                const T* hinit = h0 ? h0 + row * N : zeros.data();
                const T* gyd = gy + row * L;
                T* gud = gu + row * L;
                T* gdd = gdelta + row * L;
                const T skip = d_skip ? d_skip[g * D + d] : T(0);
                T gskip = 0;
                std::fill(gh.begin(), gh.end(), T(0));
                for (int64_t t = L - 1; t >= 0; --t) {
                    const T dt = dd[t];
                    const T ut = ud[t];
                    const T gyt = gyd[t];
                    const T* h_t = hs + t * N;
                    const T* h_prev = t > 0 ? hs + (t - 1) * N : hinit;
                    const T* bt_ = bs + t * N;
                    const T* ct_ = cs + t * N;
                    T* gbt = gbs + t * N;
                    T* gct = gcs + t * N;
                    T g_u = skip * gyt;
                    T g_dt = 0;
                    for (int64_t n = 0; n < N; ++n) {
                        const T decay = std::exp(dt * ad[n]);
                        const T ghn = gh[n] + ct_[n] * gyt;
                        gct[n] += gyt * h_t[n];
                        g_dt += ghn * (ad[n] * decay * h_prev[n] + bt_[n] * ut);
                        gad[n] += ghn * dt * decay * h_prev[n];
                        gbt[n] += ghn * dt * ut;
                        g_u += ghn * dt * bt_[n];
                        gh[n] = ghn * decay;
                    }
                    gud[t] = g_u;
                    gdd[t] = g_dt;
                    gskip += gyt * ut;
                }
                if (gd_skip) gd_skip[g * D + d] += gskip;
            }
        }
    }
}

class SelectiveScanFunction : public torch::autograd::Function<SelectiveScanFunction> {
public:
    static variable_list forward(AutogradContext* ctx, const torch::Tensor& u_in,
                                 const torch::Tensor& delta_in, const torch::Tensor& a_in,
                                 const torch::Tensor& b_in, const torch::Tensor& c_in,
                                 const torch::Tensor& d_skip_in, const torch::Tensor& h0_in) {
        const auto s = check_shapes(u_in, delta_in, a_in, b_in, c_in, d_skip_in, h0_in);
        const auto dtype = u_in.scalar_type();
        // Optional operands arrive as empty tensors.
        auto prep = [dtype](const torch::Tensor& t) {
            if (t.numel() == 0) return torch::Tensor();
            require(t.scalar_type() == dtype, "grouped_scan: all operands must share u's dtype");
            return t.contiguous();
        };
        auto u = prep(u_in);
        auto delta = prep(delta_in);
        auto a = prep(a_in);
        // Time-major copies so each step reads a contiguous N-vector.
        auto b_tn = prep(b_in).transpose(2, 3).contiguous();
        auto c_tn = prep(c_in).transpose(2, 3).contiguous();
        auto d_skip = prep(d_skip_in);
        auto h0 = prep(h0_in);

        auto y = torch::empty_like(u);
        auto states = torch::empty({s.batch, s.groups, s.inner, s.length, s.state}, u.options());
        auto last = torch::empty({s.batch, s.groups, s.inner, s.state}, u.options());

        AT_DISPATCH_FLOATING_TYPES(dtype, "selective_scan_forward", [&] {
            scan_forward<scalar_t>(s, u.data_ptr<scalar_t>(), delta.data_ptr<scalar_t>(),
                                   a.data_ptr<scalar_t>(), b_tn.data_ptr<scalar_t>(),
                                   c_tn.data_ptr<scalar_t>(),
                                   d_skip.defined() ? d_skip.data_ptr<scalar_t>() : nullptr,
                                   h0.defined() ? h0.data_ptr<scalar_t>() : nullptr,
                                   y.data_ptr<scalar_t>(), states.data_ptr<scalar_t>(),
                                   last.data_ptr<scalar_t>());
        });

        ctx->save_for_backward({u, delta, a, b_tn, c_tn, d_skip, h0, states});
        ctx->saved_data["has_skip"] = d_skip.defined();
        ctx->saved_data["has_h0"] = h0.defined();
        ctx->mark_non_differentiable({last});
        return {y, last};
    }

    static variable_list backward(AutogradContext* ctx, variable_list grad_outputs) {
        auto saved = ctx->get_saved_variables();
        const bool has_skip = ctx->saved_data["has_skip"].toBool();
        const bool has_h0 = ctx->saved_data["has_h0"].toBool();
        auto u = saved[0], delta = saved[1], a = saved[2], b_tn = saved[3], c_tn = saved[4];
        auto d_skip = has_skip ? saved[5] : torch::Tensor();
        auto h0 = has_h0 ? saved[6] : torch::Tensor();
        auto states = saved[7];

        auto gy = grad_outputs[0];
        if (!gy.defined()) gy = torch::zeros_like(u);
        gy = gy.to(u.scalar_type()).contiguous();

        const ScanShape s{u.size(0), u.size(1), u.size(2), u.size(3), a.size(-1)};
        auto gu = torch::zeros_like(u);
        auto gdelta = torch::zeros_like(delta);
        auto ga = torch::zeros_like(a);
        auto gb_tn = torch::zeros_like(b_tn);
        auto gc_tn = torch::zeros_like(c_tn);
        auto gd_skip = has_skip ? torch::zeros_like(d_skip) : torch::Tensor();

        AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_backward", [&] {
            scan_backward<scalar_t>(
                s, u.data_ptr<scalar_t>(), delta.data_ptr<scalar_t>(), a.data_ptr<scalar_t>(),
                b_tn.data_ptr<scalar_t>(), c_tn.data_ptr<scalar_t>(),
                has_skip ? d_skip.data_ptr<scalar_t>() : nullptr,
                has_h0 ? h0.data_ptr<scalar_t>() : nullptr, states.data_ptr<scalar_t>(),
                gy.data_ptr<scalar_t>(), gu.data_ptr<scalar_t>(), gdelta.data_ptr<scalar_t>(),
                ga.data_ptr<scalar_t>(), gb_tn.data_ptr<scalar_t>(), gc_tn.data_ptr<scalar_t>(),
                has_skip ? gd_skip.data_ptr<scalar_t>() : nullptr);
        });

        return {gu, gdelta, ga, gb_tn.transpose(2, 3), gc_tn.transpose(2, 3), gd_skip,
                torch::Tensor()};
    }
};

}  // namespace

std::pair<torch::Tensor, torch::Tensor> grouped_scan(const torch::Tensor& u,
                                                     const torch::Tensor& delta,
                                                     const torch::Tensor& a,
                                                     const torch::Tensor& b,
                                                     const torch::Tensor& c,
                                                     const torch::Tensor& d_skip,
                                                     const torch::Tensor& initial_state) {
    auto absent = [&u](const torch::Tensor& t) {
        return t.defined() ? t : torch::empty({0}, u.options());
    };
    auto out = SelectiveScanFunction::apply(u, delta, a, b, c, absent(d_skip), absent(initial_state));
    return {out[0], out[1]};
}

}  // namespace dsvm::ssm
