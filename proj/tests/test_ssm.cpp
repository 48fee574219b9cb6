#include <test_doctest.hpp>

#include "dsvm/error.hpp"
#include "dsvm/ssm.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace dsvm;
using namespace dsvm::ssm;

namespace {

struct Fixture {
    ScanInput input;
    SSMParams params;
};

Fixture random_fixture(int64_t L, int64_t N, int64_t D, uint64_t seed,
                       torch::Dtype dtype = torch::kFloat) {
    torch::manual_seed(seed);
    auto opts = torch::TensorOptions().dtype(dtype);
    Fixture f;
    f.input.u = torch::randn({L, D}, opts);
    f.input.delta = torch::rand({L, D}, opts) * 0.5 + 0.01;
    f.input.b = torch::randn({L, N}, opts);
    f.input.c = torch::randn({L, N}, opts);
    f.params.a_log = torch::randn({D, N}, opts) * 0.5;
    f.params.d_skip = torch::randn({D}, opts);
    f.params.delta_bias = torch::zeros({D}, opts);
    return f;
}

double max_rel_error(const torch::Tensor& got, const torch::Tensor& ref) {
    auto g = got.to(torch::kDouble);
    auto r = ref.to(torch::kDouble);
    auto denom = r.abs().clamp_min(1e-6);
    // Absolute floor for entries near zero where relative error is meaningless.
    auto err = ((g - r).abs() - 1e-6).clamp_min(0.0) / denom;
    return err.max().item<double>();
}

}  // namespace

TEST_CASE("sequential scan: near-zero A integrates the input") {
    ScanInput in;
    in.u = torch::tensor({1.0, 2.0, 3.0}, torch::kDouble).view({3, 1});
    in.delta = torch::ones({3, 1}, torch::kDouble);
    in.b = torch::ones({3, 1}, torch::kDouble);
    in.c = torch::ones({3, 1}, torch::kDouble);
    SSMParams p{torch::full({1, 1}, std::log(1e-8), torch::kDouble), torch::zeros({1}, torch::kDouble),
                torch::zeros({1}, torch::kDouble)};
    auto y = selective_scan_sequential(in, p);
    CHECK(y[0][0].item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y[1][0].item<double>() == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(y[2][0].item<double>() == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("sequential scan: zero input gives zero output") {
    auto f = random_fixture(7, 3, 4, 11);
    f.input.u.zero_();
    auto y = selective_scan_sequential(f.input, f.params);
    CHECK(y.abs().max().item<double>() == 0.0);
}

TEST_CASE("sequential scan: frozen L=4 N=2 D=1 fixture") {
    ScanInput in;
    in.u = torch::tensor({0.5, -1.0, 2.0, 0.25}, torch::kDouble).view({4, 1});
    in.delta = torch::tensor({0.1, 0.5, 0.2, 1.0}, torch::kDouble).view({4, 1});
    in.b = torch::tensor({1.0, 0.5, 0.2, -1.0, 0.3, 0.7, -0.4, 0.1}, torch::kDouble).view({4, 2});
    in.c = torch::tensor({0.6, -0.2, 1.0, 1.0, -0.5, 0.3, 0.2, 0.9}, torch::kDouble).view({4, 2});
    SSMParams p{torch::tensor({std::log(0.5), std::log(2.0)}, torch::kDouble).view({1, 2}),
                torch::tensor({0.3}, torch::kDouble), torch::zeros({1}, torch::kDouble)};
    const double expected[] = {0.175, 0.14813702518285637, 0.7540221527937381,
                               0.1610331213606793};
    auto y = selective_scan_sequential(in, p);
    auto fast = selective_scan(in, p);
    for (int t = 0; t < 4; ++t) {
        CHECK(y[t][0].item<double>() == doctest::Approx(expected[t]).epsilon(1e-14));
        CHECK(fast[t][0].item<double>() == doctest::Approx(expected[t]).epsilon(1e-12));
    }
}

TEST_CASE("scan contract violations") {
    auto f = random_fixture(5, 2, 3, 3);
    SUBCASE("mismatched lengths") {
        f.input.b = torch::randn({4, 2});
        CHECK_THROWS_AS(selective_scan_sequential(f.input, f.params), ContractError);
        CHECK_THROWS_AS(selective_scan(f.input, f.params), ContractError);
    }
    SUBCASE("non-positive delta") {
        f.input.delta[2][1] = 0.0f;
        CHECK_THROWS_AS(selective_scan_sequential(f.input, f.params), ContractError);
        CHECK_THROWS_AS(selective_scan(f.input, f.params), ContractError);
    }
}

TEST_CASE("fast scan: single step") {
    auto f = random_fixture(1, 3, 2, 5, torch::kDouble);
    auto y = selective_scan(f.input, f.params);
    for (int64_t d = 0; d < 2; ++d) {
        const double u = f.input.u[0][d].item<double>();
        const double dt = f.input.delta[0][d].item<double>();
        double expect = f.params.d_skip[d].item<double>() * u;
        for (int64_t n = 0; n < 3; ++n) {
            // h_0 = 0, so the decay term vanishes on the first step.
            expect += f.input.c[0][n].item<double>() * dt * f.input.b[0][n].item<double>() * u;
        }
        CHECK(y[0][d].item<double>() == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("fast scan: concatenation equals state passing") {
    auto f = random_fixture(12, 4, 3, 21, torch::kDouble);
    auto whole = selective_scan(f.input, f.params);

    auto slice = [](const ScanInput& in, int64_t start, int64_t len) {
        return ScanInput{in.u.narrow(0, start, len), in.delta.narrow(0, start, len),
                         in.b.narrow(0, start, len), in.c.narrow(0, start, len)};
    };
    auto first = selective_scan(slice(f.input, 0, 5), f.params, torch::Tensor());
    auto second = selective_scan(slice(f.input, 5, 7), f.params, first.last_state);
    auto joined = torch::cat({first.y, second.y}, 0);
    CHECK(torch::allclose(joined, whole, 1e-12, 1e-12));

    auto ref_first = selective_scan_sequential(slice(f.input, 0, 5), f.params, torch::Tensor());
    CHECK(torch::allclose(ref_first.last_state, first.last_state, 1e-12, 1e-12));
}

TEST_CASE("fast scan matches the sequential oracle on 100 random fixtures") {
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        const int64_t L = 1 + static_cast<int64_t>(seed * 7 % 32);
        const int64_t N = 1 + static_cast<int64_t>(seed * 3 % 8);
        const int64_t D = 1 + static_cast<int64_t>(seed * 5 % 8);
        auto f = random_fixture(L, N, D, 1000 + seed);
        auto ref = selective_scan_sequential(f.input, f.params);
        auto got = selective_scan(f.input, f.params);
        worst = std::max(worst, max_rel_error(got, ref));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("homogeneous response decays monotonically") {
    auto f = random_fixture(40, 4, 3, 77, torch::kDouble);
    // Drive for 5 steps, then hold the input at zero.
    f.input.u.narrow(0, 5, 35).zero_();
    f.input.c = torch::ones_like(f.input.c);
    double prev = std::numeric_limits<double>::infinity();
    for (int64_t len = 5; len <= 40; ++len) {
        ScanInput prefix{f.input.u.narrow(0, 0, len), f.input.delta.narrow(0, 0, len),
                         f.input.b.narrow(0, 0, len), f.input.c.narrow(0, 0, len)};
        auto res = selective_scan_sequential(prefix, f.params, torch::Tensor());
        const double norm = res.last_state.norm().item<double>();
        CHECK(norm <= prev);
        prev = norm;
    }
}

TEST_CASE("scan is bitwise deterministic") {
    auto f = random_fixture(16, 8, 8, 9);
    auto a = selective_scan(f.input, f.params);
    auto b = selective_scan(f.input, f.params);
    CHECK(torch::equal(a, b));
}

TEST_CASE("selective_scan gradients match finite differences") {
    auto f = random_fixture(6, 3, 2, 42, torch::kDouble);
    auto leaf = [](torch::Tensor t) { return t.detach().clone().set_requires_grad(true); };
    auto u = leaf(f.input.u), delta = leaf(f.input.delta), b = leaf(f.input.b),
         c = leaf(f.input.c), a_log = leaf(f.params.a_log), d_skip = leaf(f.params.d_skip);
    auto weights = torch::randn({6, 2}, torch::kDouble);
    auto fn = [&] {
        ScanInput in{u, delta, b, c};
        SSMParams p{a_log, d_skip, torch::Tensor()};
        return (selective_scan(in, p) * weights).sum();
    };
    auto res = testing::gradcheck(
        fn, {{"u", u}, {"delta", delta}, {"b", b}, {"c", c}, {"a_log", a_log}, {"d_skip", d_skip}});
    INFO("worst: " << res.worst);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("cross_scan enumerates a 2x2 grid") {
    auto x = torch::tensor({1.0, 2.0, 3.0, 4.0}).view({1, 1, 2, 2});
    auto s = cross_scan(x);
    REQUIRE(s.sizes() == torch::IntArrayRef({1, 4, 1, 4}));
    auto row = [&](int k) { return s[0][k][0]; };
    CHECK(torch::equal(row(0), torch::tensor({1.0f, 2.0f, 3.0f, 4.0f})));
    CHECK(torch::equal(row(1), torch::tensor({1.0f, 3.0f, 2.0f, 4.0f})));
    CHECK(torch::equal(row(2), torch::tensor({4.0f, 3.0f, 2.0f, 1.0f})));
    CHECK(torch::equal(row(3), torch::tensor({4.0f, 2.0f, 3.0f, 1.0f})));
}

TEST_CASE("cross_scan of a single pixel") {
    auto x = torch::tensor({5.0f}).view({1, 1, 1, 1});
    auto s = cross_scan(x);
    CHECK(torch::equal(s, torch::full({1, 4, 1, 1}, 5.0f)));
}

TEST_CASE("cross_merge inverts cross_scan up to the factor 4 on every grid up to 8x8") {
    torch::manual_seed(3);
    for (int64_t h = 1; h <= 8; ++h) {
        for (int64_t w = 1; w <= 8; ++w) {
            auto x = torch::randn({2, 3, h, w});
            auto merged = cross_merge(cross_scan(x), h, w);
            CHECK(torch::allclose(merged, 4 * x, 0, 1e-6));
        }
    }
}

TEST_CASE("cross_merge edge cases") {
    auto x = torch::randn({1, 2, 3, 5});
    CHECK(torch::equal(cross_merge(torch::zeros({1, 4, 2, 15}), 3, 5), torch::zeros({1, 2, 3, 5})));

    // One direction carries x, the other three are zero.
    for (int k = 0; k < 4; ++k) {
        auto seqs = torch::zeros({1, 4, 2, 15});
        seqs.select(1, k).copy_(cross_scan(x).select(1, k));
        CHECK(torch::allclose(cross_merge(seqs, 3, 5), x));
    }
    CHECK_THROWS_AS(cross_merge(torch::zeros({1, 4, 2, 14}), 3, 5), ContractError);
}

TEST_CASE("VSS block: zero output projection is the identity") {
    torch::manual_seed(0);
    VSSBlock block(VSSBlockOptions(16));
    {
        torch::NoGradGuard ng;
        block->out_proj->weight.zero_();
    }
    auto x = torch::zeros({1, 8, 8, 16});
    CHECK(torch::equal(block->forward(x), x));
    auto r = torch::randn({2, 8, 8, 16});
    CHECK(torch::equal(block->forward(r), r));
}

TEST_CASE("VSS block: output shape equals input shape") {
    torch::manual_seed(1);
    VSSBlock block(VSSBlockOptions(16));
    auto x = torch::randn({1, 8, 8, 16});
    auto y = block->forward(x);
    CHECK(y.sizes() == x.sizes());
    CHECK(torch::equal(y, block->forward(x)));
}

TEST_CASE("VSS block: rejects non-finite input") {
    VSSBlock block(VSSBlockOptions(4));
    auto x = torch::zeros({1, 2, 2, 4});
    x[0][1][1][2] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(block->forward(x), ContractError);
}

TEST_CASE("VSS block: direction parameters are valid SSMParams") {
    VSSBlock block(VSSBlockOptions(8).state_dim(4));
    for (int k = 0; k < 4; ++k) {
        auto p = block->direction_params(k);
        p.validate();
        CHECK(p.inner_dim() == 16);
        CHECK(p.state_dim() == 4);
        CHECK((p.state_matrix() < 0).all().item<bool>());
    }
}

TEST_CASE("VSS block gradients match finite differences") {
    torch::manual_seed(5);
    VSSBlock block(VSSBlockOptions(4).state_dim(4));
    block->to(torch::kDouble);
    auto x = torch::randn({1, 4, 4, 4}, torch::kDouble).requires_grad_(true);
    auto readout = torch::randn({1, 4, 4, 4}, torch::kDouble);
    std::vector<std::pair<std::string, torch::Tensor>> inputs{{"x", x}};
    for (auto& p : block->named_parameters()) inputs.emplace_back(p.key(), p.value());
    auto fn = [&] { return (block->forward(x) * readout).sum(); };
    auto res = testing::gradcheck(fn, inputs);
    INFO("worst: " << res.worst);
    CHECK(res.max_rel_error < 1e-3);
}
