#include "cimd/errors.hpp"
#include "cimd/objectives.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace cimd;
using testsupport::random_signs;
using testsupport::random_tensor;

namespace {

ModelConfig tiny_model(CovarianceMode mode = CovarianceMode::AxisAligned, bool ambiguity = true) {
    ModelConfig m;
    m.T = 20;
    m.schedule.rescale = false;
    m.denoiser.image_size = 8;
    m.denoiser.base_channels = 4;
    m.denoiser.channel_multipliers = {1, 2};
    m.denoiser.time_embed_dim = 8;
    m.ambiguity.filters = {4, 6, 8, 8};
    m.ambiguity.latent_dim = 3;
    m.ambiguity.covariance_mode = mode;
    m.use_ambiguity = ambiguity;
    return m;
}

Tensor full_like(Shape s, double v) {
    Tensor t(s);
    t.fill(v);
    return t;
}

}  // namespace

TEST_CASE("l_simple matches a direct loop and its gradient") {
    const Tensor eps = random_tensor({2, 1, 3, 3}, 1);
    const Tensor eh = random_tensor({2, 1, 3, 3}, 2);
    double ref = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) ref += std::pow(eh.data[i] - eps.data[i], 2);
    ref /= 18.0;
    Tensor g;
    CHECK(l_simple(eps, eh, &g) == doctest::Approx(ref).epsilon(1e-14));
    for (std::size_t i = 0; i < eps.size(); ++i) CHECK(g.data[i] == doctest::Approx(2.0 * (eh.data[i] - eps.data[i]) / 18.0));

    Tensor a(1, 1, 1, 2), b(1, 1, 1, 2);
    a.data = {1.0, 2.0};
    CHECK(l_simple(a, b) == 2.5);
    CHECK(l_simple(a, a) == 0.0);
    CHECK_THROWS_AS(l_simple(a, Tensor(1, 1, 2, 1)), std::invalid_argument);
}

TEST_CASE("normal_kl against hand values") {
    // KL(N(0,1) || N(1,4)) = ln 2 + (1 + 1) / 8 - 1/2
    CHECK(normal_kl(0.0, 0.0, 1.0, std::log(4.0)) == doctest::Approx(std::log(2.0) - 0.25).epsilon(1e-14));
    CHECK(normal_kl(0.3, -1.2, 0.3, -1.2) == 0.0);
    CHECK(normal_kl(0.0, 0.0, 2.0, 0.0) == doctest::Approx(2.0));
}

TEST_CASE("discretized likelihood normalises over the 256 bins") {
    for (double mean : {-0.9, 0.0, 0.37, 1.0}) {
        for (double logvar : {std::log(1e-4), std::log(0.01), 0.0}) {
            double total = 0.0;
            for (int k = 0; k < 256; ++k) {
                const double x = -1.0 + 2.0 * k / 255.0;
                total += std::exp(discretized_gaussian_log_likelihood(x, mean, logvar));
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    // Interior bin: Phi((c + 1/255)/sigma) - Phi((c - 1/255)/sigma) written with erf.
    const double x = 0.2, mean = 0.21, sd = 0.05;
    const double phi_hi = 0.5 * (1.0 + std::erf((x - mean + 1.0 / 255.0) / sd / std::sqrt(2.0)));
    const double phi_lo = 0.5 * (1.0 + std::erf((x - mean - 1.0 / 255.0) / sd / std::sqrt(2.0)));
    CHECK(discretized_gaussian_log_likelihood(x, mean, 2.0 * std::log(sd)) ==
          doctest::Approx(std::log(phi_hi - phi_lo)).epsilon(1e-12));
    // Far from the mean the floor keeps it finite.
    CHECK(std::isfinite(discretized_gaussian_log_likelihood(-1.0, 1.0, std::log(1e-8))));
}

TEST_CASE("discretized likelihood logvar gradient") {
    for (double x : {-1.0, 0.0, 0.5, 1.0}) {
        const double mean = 0.03, lv = std::log(0.02);
        double g = 0.0;
        discretized_gaussian_log_likelihood(x, mean, lv, &g);
        const double fd = (discretized_gaussian_log_likelihood(x, mean, lv + 1e-6) -
                           discretized_gaussian_log_likelihood(x, mean, lv - 1e-6)) / 2e-6;
        CHECK(g == doctest::Approx(fd).epsilon(1e-6).scale(1e-9));
    }
}

TEST_CASE("variational term vanishes when the model matches the posterior") {
    const NoiseSchedule s = make_linear_schedule(100);
    const Tensor x0 = random_signs({1, 1, 4, 4}, 3);
    const Tensor eps = random_tensor({1, 1, 4, 4}, 4);
    const Tensor v = full_like({1, 1, 4, 4}, -60.0);  // logvar at the posterior value
    for (int t : {2, 17, 100}) {
        const Tensor x_t = q_sample(x0, t, eps, s);
        CHECK(std::abs(l_vlb_term(x0, x_t, t, eps, v, s)) < 1e-12);
    }
    // A wrong eps_hat costs something.
    const Tensor x_t = q_sample(x0, 10, eps, s);
    CHECK(l_vlb_term(x0, x_t, 10, random_tensor({1, 1, 4, 4}, 5), v, s) > 0.0);
}

TEST_CASE("decoder term at t = 1 is the discretized NLL in bits") {
    const NoiseSchedule s = make_linear_schedule(100);
    const Tensor x0 = random_signs({1, 1, 2, 2}, 6);
    const Tensor eps = random_tensor({1, 1, 2, 2}, 7);
    const Tensor v = random_tensor({1, 1, 2, 2}, 8);
    const Tensor x_t = q_sample(x0, 1, eps, s);
    const Tensor eh = random_tensor({1, 1, 2, 2}, 9, 0.3);
    const Tensor lv = interpolate_variance(v, 1, s);
    const double g1 = s.gamma(1);
    double ref = 0.0;
    for (int i = 0; i < 4; ++i) {
        // At t = 1 the posterior mean collapses to the predicted x0.
        const double x0p = (x_t.data[i] - std::sqrt(1.0 - g1) * eh.data[i]) / std::sqrt(g1);
        ref -= discretized_gaussian_log_likelihood(x0.data[i], x0p, lv.data[i]);
    }
    ref = ref / 4.0 / std::numbers::ln2;
    CHECK(l_vlb_term(x0, x_t, 1, eh, v, s) == doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("variational term gradient with respect to v") {
    const NoiseSchedule s = make_linear_schedule(50);
    const Tensor x0 = random_signs({1, 1, 3, 3}, 10);
    const Tensor eps = random_tensor({1, 1, 3, 3}, 11);
    const Tensor eh = random_tensor({1, 1, 3, 3}, 12);
    for (int t : {1, 2, 30}) {
        Tensor v = random_tensor({1, 1, 3, 3}, 13);
        const Tensor x_t = q_sample(x0, t, eps, s);
        Tensor g;
        l_vlb_term(x0, x_t, t, eh, v, s, &g);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double o = v.data[i];
            v.data[i] = o + 1e-6;
            const double lp = l_vlb_term(x0, x_t, t, eh, v, s);
            v.data[i] = o - 1e-6;
            const double lm = l_vlb_term(x0, x_t, t, eh, v, s);
            v.data[i] = o;
            CHECK(g.data[i] == doctest::Approx((lp - lm) / 2e-6).epsilon(1e-4).scale(1e-6));
        }
    }
}

TEST_CASE("prior term is negligible for the standard 1000-step schedule") {
    const NoiseSchedule s = make_linear_schedule(1000);
    Tensor x0(1, 1, 2, 2);
    x0.data = {1.0, -1.0, 1.0, -1.0};
    const double lt = prior_bpd(x0, s);
    CHECK(lt < 1e-3);
    // Reference from a 50-digit evaluation of the same closed form.
    CHECK(lt == doctest::Approx(2.9112945e-5).epsilon(1e-6));
}

TEST_CASE("full bound is finite and decomposes into its terms") {
    const ModelConfig mc = tiny_model();
    const Model model(mc);
    const ParamMap p = model.init_params(1);
    const Tensor b = random_tensor({1, 1, 8, 8}, 2);
    const Tensor x0 = random_signs({1, 1, 8, 8}, 3);
    std::vector<Tensor> draws;
    for (int t = 0; t < mc.T; ++t) draws.push_back(random_tensor({1, 1, 8, 8}, 100 + t));
    auto fn = [&](const Tensor& x_t, int t) { return model.denoiser().forward(p, b, x_t, {t}); };
    const double total = vlb_full(x0, model.schedule(), fn, draws);
    double ref = prior_bpd(x0, model.schedule());
    for (int t = 1; t <= mc.T; ++t) {
        const Tensor x_t = q_sample(x0, t, draws[t - 1], model.schedule());
        const auto o = fn(x_t, t);
        ref += l_vlb_term(x0, x_t, t, o.eps_hat, o.v, model.schedule());
    }
    CHECK(std::isfinite(total));
    CHECK(total == ref);
    CHECK_THROWS_AS(vlb_full(x0, model.schedule(), fn, {}), std::invalid_argument);
}

TEST_CASE("total loss weighting") {
    LossWeights w;
    CHECK(w.lambda == 0.001);
    CHECK(w.beta == 0.001);
    const LossReport r = total_loss({1.0, 2.0, 3.0}, w);
    CHECK(r.total == 1.0 + 0.001 * 2.0 + 0.001 * 3.0);
    CHECK(r.total == doctest::Approx(1.005).epsilon(1e-15));
    CHECK(total_loss({0.5, 0.0, 0.0}, w).total == 0.5);
    CHECK_THROWS_AS(total_loss({1.0, 2.0, 3.0}, LossWeights{-1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("non-finite terms are reported by name") {
    const LossWeights w;
    auto message = [&](LossParts parts) -> std::string {
        try {
            total_loss(parts, w);
        } catch (const DiagnosticError& e) {
            return e.what();
        }
        return "";
    };
    CHECK(message({std::nan(""), 0.0, 0.0}).find("l_simple") != std::string::npos);
    CHECK(message({0.0, INFINITY, 0.0}).find("l_vlb") != std::string::npos);
    CHECK(message({0.0, 0.0, std::nan("")}).find("l_amb") != std::string::npos);
}

TEST_CASE("l_amb averages the per-example KL") {
    const auto q1 = LatentGaussian::axis_aligned({1.0}, {1.0});
    const auto p1 = LatentGaussian::axis_aligned({0.0}, {1.0});
    const auto q2 = LatentGaussian::axis_aligned({0.0}, {1.0});
    CHECK(l_amb({q1, q2}, {p1, p1}) == doctest::Approx(0.25));
    CHECK_THROWS_AS(l_amb({q1}, {}), std::invalid_argument);
}

TEST_CASE("end-to-end gradients of the weighted objective match finite differences") {
    struct Case {
        CovarianceMode mode;
        bool ambiguity;
    };
    for (const Case c : {Case{CovarianceMode::AxisAligned, true}, Case{CovarianceMode::Full, true},
                         Case{CovarianceMode::AxisAligned, false}}) {
        const Model model(tiny_model(c.mode, c.ambiguity));
        ParamMap p = model.init_params(4);
        // Nonzero output gain and off-diagonal heads so every path carries signal.
        for (double& v : p.at("denoiser.out.conv.w").data) v *= 10.0;
        for (auto* name : {"amn.head_offdiag.w", "acn.head_offdiag.w"}) {
            if (p.count(name)) p[name] = random_tensor(p[name].shape, 5, 0.3);
        }
        TrainBatch batch;
        batch.b = random_tensor({3, 1, 8, 8}, 6);
        batch.x0 = random_signs({3, 1, 8, 8}, 7);
        batch.t = {1, 2, 15};
        batch.eps = random_tensor({3, 1, 8, 8}, 8);
        // Weights large enough that the secondary terms are visible in the check.
        const LossWeights w{0.001, 0.001};

        ParamMap grads = zeros_like(p);
        const LossReport rep = forward_backward(model, p, batch, w, &grads);
        const LossReport no_grad = forward_backward(model, p, batch, w, nullptr);
        CHECK(rep.total == no_grad.total);

        const Tensor x_t = q_sample_batch(batch.x0, batch.t, batch.eps, model.schedule());
        const Tensor frozen = model.denoiser().forward(p, batch.b, x_t, batch.t).eps_hat;
        auto loss = [&](const ParamMap& pp) { return oracle::reference_total(model, pp, batch, w, frozen); };
        CHECK(loss(p) == doctest::Approx(rep.total).epsilon(1e-12));

        const auto res = testsupport::check_gradients(p, grads, loss, "", 3, 1e-5, 1e-11);
        INFO("worst tensor: " << res.worst_name << " mode " << to_string(c.mode) << " amb " << c.ambiguity);
        CHECK(res.checked == static_cast<int>(p.size()));
        MESSAGE("worst relative error " << res.worst << " (" << res.worst_name << ")");
        CHECK(res.worst < 1e-3);
        if (!c.ambiguity) {
            for (const auto& [name, t] : p) CHECK(name.rfind("denoiser.", 0) == 0);
        }
    }
}
