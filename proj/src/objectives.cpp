#include "cimd/objectives.hpp"

#include "cimd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cimd {

namespace {

constexpr double kBinHalfWidth = 1.0 / 255.0;
constexpr double kProbFloor = 1e-12;

double std_normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }
// Phi(u) and 1 - Phi(u) via erfc so neither tail cancels.
double std_normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }
double std_normal_sf(double u) { return 0.5 * std::erfc(u / std::numbers::sqrt2); }

void require_single_mask(const Tensor& x, const char* what) {
    if (x.shape.n != 1 || x.shape.c != 1) throw std::invalid_argument(std::string(what) + ": expected (1, 1, H, W)");
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("LossWeights: lambda must be finite and >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("LossWeights: beta must be finite and >= 0");
}

double l_simple(const Tensor& eps, const Tensor& eps_hat, Tensor* grad_eps_hat) {
    require_same_shape(eps, eps_hat, "l_simple");
    const double n = static_cast<double>(eps.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps_hat.data[i] - eps.data[i];
        acc += d * d;
    }
    if (grad_eps_hat != nullptr) {
        *grad_eps_hat = Tensor(eps.shape);
        for (std::size_t i = 0; i < eps.size(); ++i) grad_eps_hat->data[i] = 2.0 * (eps_hat.data[i] - eps.data[i]) / n;
    }
    return acc / n;
}

double normal_kl(double mean1, double logvar1, double mean2, double logvar2) {
    const double d = mean1 - mean2;
    const double r = logvar1 - logvar2;
    return 0.5 * (std::expm1(r) - r + d * d * std::exp(-logvar2));
}

double discretized_gaussian_log_likelihood(double x, double mean, double logvar, double* grad_logvar) {
    const double inv_std = std::exp(-0.5 * logvar);
    const double c = x - mean;
    const double u_plus = inv_std * (c + kBinHalfWidth);
    const double u_min = inv_std * (c - kBinHalfWidth);
    // du/dlogvar = -u/2 for both edges.
    double value, grad = 0.0;
    if (x < -0.999) {
        const double cdf = std_normal_cdf(u_plus);
        value = std::log(std::max(cdf, kProbFloor));
        if (cdf > kProbFloor) grad = std_normal_pdf(u_plus) / cdf * (-0.5 * u_plus);
    } else if (x > 0.999) {
        const double sf = std_normal_sf(u_min);
        value = std::log(std::max(sf, kProbFloor));
        if (sf > kProbFloor) grad = -std_normal_pdf(u_min) / sf * (-0.5 * u_min);
    } else {
        const double delta = std_normal_cdf(u_plus) - std_normal_cdf(u_min);
        value = std::log(std::max(delta, kProbFloor));
        if (delta > kProbFloor) {
            grad = (std_normal_pdf(u_plus) * (-0.5 * u_plus) - std_normal_pdf(u_min) * (-0.5 * u_min)) / delta;
        }
    }
    if (grad_logvar != nullptr) *grad_logvar = grad;
    return value;
}

double l_vlb_term(const Tensor& x0, const Tensor& x_t, int t, const Tensor& eps_hat, const Tensor& v,
                  const NoiseSchedule& s, Tensor* grad_v) {
    require_single_mask(x0, "l_vlb_term");
    require_same_shape(x0, x_t, "l_vlb_term");
    require_same_shape(x0, eps_hat, "l_vlb_term");
    require_same_shape(x0, v, "l_vlb_term");
    s.check_timestep(t);

    const Tensor x0_pred = predict_x0_from_eps(x_t, t, eps_hat, s, false);
    const Tensor logvar = interpolate_variance(v, t, s);
    const Tensor dlog_dv = interpolate_variance_grad(v, t, s);
    const double cx0 = s.posterior_x0_coef(t);
    const double cxt = s.posterior_xt_coef(t);
    const double n = static_cast<double>(x0.size());
    const double to_bits = 1.0 / std::numbers::ln2;

    if (grad_v != nullptr) *grad_v = Tensor(v.shape);
    double acc = 0.0;
    if (t == 1) {
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double mean = cx0 * x0_pred.data[i] + cxt * x_t.data[i];
            double g = 0.0;
            acc -= discretized_gaussian_log_likelihood(x0.data[i], mean, logvar.data[i], &g);
            if (grad_v != nullptr) grad_v->data[i] = -g * dlog_dv.data[i] * to_bits / n;
        }
    } else {
        const double lq = s.posterior_log_variance_clipped(t);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double mq = cx0 * x0.data[i] + cxt * x_t.data[i];
            const double mp = cx0 * x0_pred.data[i] + cxt * x_t.data[i];
            const double lp = logvar.data[i];
            acc += normal_kl(mq, lq, mp, lp);
            if (grad_v != nullptr) {
                const double d = mq - mp;
                const double g = 0.5 * (1.0 - std::exp(lq - lp) - d * d * std::exp(-lp));
                grad_v->data[i] = g * dlog_dv.data[i] * to_bits / n;
            }
        }
    }
    return acc / n * to_bits;
}

double prior_bpd(const Tensor& x0, const NoiseSchedule& s) {
    const int T = s.T();
    const double g = s.gamma(T);
    const double lv = std::log1p(-g);
    double acc = 0.0;
    for (double x : x0.data) acc += normal_kl(std::sqrt(g) * x, lv, 0.0, 0.0);
    return acc / static_cast<double>(x0.size()) / std::numbers::ln2;
}

double vlb_full(const Tensor& x0, const NoiseSchedule& s, const DenoiseFn& model, const std::vector<Tensor>& eps_draws) {
    require_single_mask(x0, "vlb_full");
    if (eps_draws.size() != static_cast<std::size_t>(s.T())) throw std::invalid_argument("vlb_full: need T noise draws");
    double total = prior_bpd(x0, s);
    for (int t = 1; t <= s.T(); ++t) {
        const Tensor x_t = q_sample(x0, t, eps_draws[t - 1], s);
        const DenoiserOutput out = model(x_t, t);
        total += l_vlb_term(x0, x_t, t, out.eps_hat, out.v, s);
    }
    return total;
}

double l_amb(const std::vector<LatentGaussian>& q, const std::vector<LatentGaussian>& p, std::vector<KlGradients>* grads) {
    if (q.size() != p.size() || q.empty()) throw std::invalid_argument("l_amb: need equally many (q, p) pairs");
    const double n = static_cast<double>(q.size());
    if (grads != nullptr) grads->assign(q.size(), {});
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        acc += kl_divergence(q[i], p[i], grads != nullptr ? &(*grads)[i] : nullptr);
        if (grads != nullptr) {
            for (auto* vec : {&(*grads)[i].mean_q, &(*grads)[i].scale_q, &(*grads)[i].mean_p, &(*grads)[i].scale_p}) {
                for (double& g : *vec) g /= n;
            }
        }
    }
    return acc / n;
}

LossReport total_loss(const LossParts& parts, const LossWeights& w) {
    w.validate();
    LossReport r;
    r.l_simple = parts.l_simple;
    r.l_vlb = parts.l_vlb;
    r.l_amb = parts.l_amb;
    r.simple_finite = std::isfinite(parts.l_simple);
    r.vlb_finite = std::isfinite(parts.l_vlb);
    r.amb_finite = std::isfinite(parts.l_amb);
    if (!r.simple_finite) throw DiagnosticError("non-finite loss term: l_simple");
    if (!r.vlb_finite) throw DiagnosticError("non-finite loss term: l_vlb");
    if (!r.amb_finite) throw DiagnosticError("non-finite loss term: l_amb");
    r.total = r.l_simple + w.lambda * r.l_vlb + w.beta * r.l_amb;
    return r;
}

LossReport forward_backward(const Model& model, const ParamMap& params, const TrainBatch& batch, const LossWeights& w,
                            ParamMap* grads) {
    const NoiseSchedule& s = model.schedule();
    const int n = batch.x0.shape.n;
    if (static_cast<int>(batch.t.size()) != n) throw std::invalid_argument("forward_backward: one timestep per example");
    require_same_shape(batch.x0, batch.eps, "forward_backward");

    const Tensor x_t = q_sample_batch(batch.x0, batch.t, batch.eps, s);
    DenoiserCache dcache;
    const DenoiserOutput out = model.denoiser().forward(params, batch.b, x_t, batch.t, &dcache);
    if (!all_finite(out.eps_hat) || !all_finite(out.v)) throw DiagnosticError("denoiser produced non-finite output");

    LossParts parts;
    Tensor grad_eps;
    parts.l_simple = l_simple(batch.eps, out.eps_hat, grads != nullptr ? &grad_eps : nullptr);

    Tensor grad_v(out.v.shape);
    for (int i = 0; i < n; ++i) {
        Tensor gv;
        parts.l_vlb += l_vlb_term(batch.x0.slice_example(i), x_t.slice_example(i), batch.t[i],
                                  out.eps_hat.slice_example(i), out.v.slice_example(i), s,
                                  grads != nullptr ? &gv : nullptr);
        if (grads != nullptr) {
            auto dst = grad_v.example(i);
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = gv.data[k] * w.lambda / n;
        }
    }
    parts.l_vlb /= n;

    const bool amb = model.has_ambiguity();
    AmbiguityCache qcache, pcache;
    Tensor q_raw, p_raw, x0_hat_raw;
    std::vector<LatentGaussian> q, p;
    if (amb) {
        x0_hat_raw = predict_x0_from_eps_batch(x_t, batch.t, out.eps_hat, s, false);
        Tensor x0_hat = x0_hat_raw;
        for (double& val : x0_hat.data) val = std::clamp(val, -1.0, 1.0);
        std::vector<double> t_frac(n);
        for (int i = 0; i < n; ++i) t_frac[i] = static_cast<double>(batch.t[i]) / s.T();
        q_raw = model.amn().forward_raw(params, batch.b, batch.x0, {}, &qcache);
        p_raw = model.acn().forward_raw(params, batch.b, x0_hat, t_frac, &pcache);
        q = model.amn().to_gaussians(q_raw);
        p = model.acn().to_gaussians(p_raw);
    }

    std::vector<KlGradients> kl_grads;
    if (amb) parts.l_amb = l_amb(q, p, grads != nullptr ? &kl_grads : nullptr);

    LossWeights eff = w;
    if (!amb) eff.beta = 0.0;
    const LossReport report = total_loss(parts, eff);
    if (grads == nullptr) return report;

    if (amb && eff.beta != 0.0) {
        std::vector<std::vector<double>> gmq(n), gsq(n), gmp(n), gsp(n);
        for (int i = 0; i < n; ++i) {
            gmq[i] = kl_grads[i].mean_q;
            gsq[i] = kl_grads[i].scale_q;
            gmp[i] = kl_grads[i].mean_p;
            gsp[i] = kl_grads[i].scale_p;
            for (auto* vec : {&gmq[i], &gsq[i], &gmp[i], &gsp[i]}) {
                for (double& g : *vec) g *= eff.beta;
            }
        }
        const Tensor gq_raw = model.amn().gaussian_grads_to_raw(q_raw, gmq, gsq);
        const Tensor gp_raw = model.acn().gaussian_grads_to_raw(p_raw, gmp, gsp);
        model.amn().backward_raw(params, qcache, gq_raw, *grads);
        const Tensor g_x0_hat = model.acn().backward_raw(params, pcache, gp_raw, *grads);
        // x0_hat = clip((x_t - sqrt(1 - gamma) eps_hat) / sqrt(gamma))
        const std::size_t per = g_x0_hat.shape.per_example();
        for (int i = 0; i < n; ++i) {
            const double g = s.gamma(batch.t[i]);
            const double coef = -std::sqrt(1.0 - g) / std::sqrt(g);
            for (std::size_t k = 0; k < per; ++k) {
                const std::size_t idx = i * per + k;
                const double raw = x0_hat_raw.data[idx];
                if (raw > -1.0 && raw < 1.0) grad_eps.data[idx] += g_x0_hat.data[idx] * coef;
            }
        }
    }

    model.denoiser().backward(params, dcache, grad_eps, grad_v, *grads);
    return report;
}

}  // namespace cimd
