#include "cimd/denoiser.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace cimd;
using testsupport::random_tensor;

namespace {

DenoiserConfig tiny(int prior_channels = 1) {
    DenoiserConfig c;
    c.image_size = 8;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.prior_channels = prior_channels;
    c.time_embed_dim = 8;
    return c;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace

TEST_CASE("denoiser output shapes and determinism") {
    DenoiserConfig cfg;  // desk default, 16x16
    const Denoiser net(cfg);
    ParamMap p;
    net.init_params(p, 3);
    const Tensor b = random_tensor({2, 1, 16, 16}, 1);
    const Tensor x = random_tensor({2, 1, 16, 16}, 2);
    const DenoiserOutput a = denoise_forward(p, cfg, b, x, {5, 77});
    const DenoiserOutput c = denoise_forward(p, cfg, b, x, {5, 77});
    CHECK(a.eps_hat.shape == Shape{2, 1, 16, 16});
    CHECK(a.v.shape == Shape{2, 1, 16, 16});
    CHECK(a.eps_hat.data == c.eps_hat.data);
    CHECK(a.v.data == c.v.data);
}

TEST_CASE("misaligned inputs are rejected") {
    const DenoiserConfig cfg = tiny();
    ParamMap p;
    Denoiser(cfg).init_params(p, 1);
    CHECK_THROWS_AS(denoise_forward(p, cfg, Tensor(1, 1, 8, 8), Tensor(1, 1, 4, 4), {1}), std::invalid_argument);
    CHECK_THROWS_AS(denoise_forward(p, cfg, Tensor(1, 2, 8, 8), Tensor(1, 1, 8, 8), {1}), std::invalid_argument);
    CHECK_THROWS_AS(denoise_forward(p, cfg, Tensor(2, 1, 8, 8), Tensor(2, 1, 8, 8), {1}), std::invalid_argument);
}

TEST_CASE("config validation requires divisibility by the pooling depth") {
    DenoiserConfig c = tiny();
    c.image_size = 6;
    c.channel_multipliers = {1, 2, 4};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("permuting the batch permutes the outputs") {
    const DenoiserConfig cfg = tiny(2);
    ParamMap p;
    Denoiser(cfg).init_params(p, 9);
    const Tensor b = random_tensor({3, 2, 8, 8}, 4);
    const Tensor x = random_tensor({3, 1, 8, 8}, 5);
    const DenoiserOutput out = denoise_forward(p, cfg, b, x, {1, 2, 3});
    const std::vector<int> perm{2, 0, 1};
    std::vector<Tensor> bp, xp;
    for (int i : perm) {
        bp.push_back(b.slice_example(i));
        xp.push_back(x.slice_example(i));
    }
    const DenoiserOutput o2 = denoise_forward(p, cfg, stack_examples(bp), stack_examples(xp), {3, 1, 2});
    for (int k = 0; k < 3; ++k) {
        const auto a = out.eps_hat.example(perm[k]);
        const auto c = o2.eps_hat.example(k);
        CHECK(std::equal(a.begin(), a.end(), c.begin()));
        const auto va = out.v.example(perm[k]);
        const auto vc = o2.v.example(k);
        CHECK(std::equal(va.begin(), va.end(), vc.begin()));
    }
}

TEST_CASE("denoiser parameter gradients match central differences") {
    const DenoiserConfig cfg = tiny();
    const Denoiser net(cfg);
    ParamMap p;
    net.init_params(p, 21);
    // Push the output conv away from its small initial gain so every path carries signal.
    for (double& v : p.at("denoiser.out.conv.w").data) v *= 10.0;
    const Tensor b = random_tensor({2, 1, 8, 8}, 1);
    const Tensor x = random_tensor({2, 1, 8, 8}, 2);
    const std::vector<int> t{3, 40};
    const Tensor r1 = random_tensor({2, 1, 8, 8}, 3);
    const Tensor r2 = random_tensor({2, 1, 8, 8}, 4);

    auto loss = [&](const ParamMap& pp) {
        const DenoiserOutput o = net.forward(pp, b, x, t);
        return dot(o.eps_hat, r1) + dot(o.v, r2);
    };
    DenoiserCache cache;
    net.forward(p, b, x, t, &cache);
    ParamMap grads = zeros_like(p);
    net.backward(p, cache, r1, r2, grads);

    const auto res = testsupport::check_gradients(p, grads, loss, "denoiser.", 4, 1e-5);
    INFO("worst tensor: " << res.worst_name);
    CHECK(res.checked == static_cast<int>(p.size()));
    CHECK(res.worst < 1e-3);
}

TEST_CASE("interpolate_variance endpoints and midpoint") {
    const NoiseSchedule s = make_linear_schedule(100);
    Tensor v(1, 1, 1, 3);
    v.data = {-1e3, 1e3, 0.0};
    for (int t : {1, 2, 50, 100}) {
        const Tensor lv = interpolate_variance(v, t, s);
        const double lo = t == 1 ? std::log(s.posterior_variance(2)) : std::log(s.posterior_variance(t));
        const double hi = std::log(s.beta(t));
        CHECK(lv.data[0] == doctest::Approx(lo).epsilon(1e-12));
        CHECK(lv.data[1] == doctest::Approx(hi).epsilon(1e-12));
        // v = 0: geometric mean of the two variances.
        CHECK(std::exp(lv.data[2]) == doctest::Approx(std::sqrt(std::exp(lo) * std::exp(hi))).epsilon(1e-12));
    }
    const Tensor g = interpolate_variance_grad(v, 50, s);
    Tensor vp = v, vm = v;
    for (double& e : vp.data) e += 1e-6;
    for (double& e : vm.data) e -= 1e-6;
    const Tensor lp = interpolate_variance(vp, 50, s), lm = interpolate_variance(vm, 50, s);
    CHECK(g.data[2] == doctest::Approx((lp.data[2] - lm.data[2]) / 2e-6).epsilon(1e-6));
}
