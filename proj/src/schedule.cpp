#include "cimd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cimd {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw std::invalid_argument("noise schedule needs at least one step");
    alphas_.resize(betas_.size());
    gammas_.resize(betas_.size() + 1);
    gammas_[0] = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        const double b = betas_[i];
        if (!(b > 0.0 && b < 1.0)) {
            throw std::invalid_argument("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                                        " is outside (0, 1)");
        }
        alphas_[i] = 1.0 - b;
        gammas_[i + 1] = gammas_[i] * alphas_[i];
    }
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) { return NoiseSchedule(std::move(betas)); }

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > T()) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
    }
}

double NoiseSchedule::beta(int t) const {
    check_timestep(t);
    return betas_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
    check_timestep(t);
    return alphas_[t - 1];
}

double NoiseSchedule::gamma(int t) const {
    if (t < 0 || t > T()) {
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
    }
    return gammas_[t];
}

double NoiseSchedule::posterior_variance(int t) const {
    check_timestep(t);
    return (1.0 - gammas_[t - 1]) * (1.0 - alphas_[t - 1]) / (1.0 - gammas_[t]);
}

double NoiseSchedule::posterior_x0_coef(int t) const {
    check_timestep(t);
    return std::sqrt(gammas_[t - 1]) * (1.0 - alphas_[t - 1]) / (1.0 - gammas_[t]);
}

double NoiseSchedule::posterior_xt_coef(int t) const {
    check_timestep(t);
    return std::sqrt(alphas_[t - 1]) * (1.0 - gammas_[t - 1]) / (1.0 - gammas_[t]);
}

double NoiseSchedule::posterior_log_variance_clipped(int t) const {
    check_timestep(t);
    if (t == 1) return T() >= 2 ? std::log(posterior_variance(2)) : std::log(betas_[0]);
    return std::log(posterior_variance(t));
}

NoiseSchedule make_linear_schedule(int T, const LinearScheduleConfig& cfg) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1, got " + std::to_string(T));
    const double scale = (cfg.rescale && T != 1000) ? 1000.0 / T : 1.0;
    const double start = cfg.beta_start * scale;
    const double end = cfg.beta_end * scale;
    if (!(start > 0.0 && end < 1.0 && start <= end)) {
        throw std::invalid_argument("make_linear_schedule: endpoints [" + std::to_string(start) + ", " +
                                    std::to_string(end) + "] (after rescaling for T=" + std::to_string(T) +
                                    ") must satisfy 0 < start <= end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (T == 1) {
        betas[0] = end;
    } else {
        for (int i = 0; i < T; ++i) betas[i] = start + (end - start) * static_cast<double>(i) / (T - 1);
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(x0, eps, "q_sample");
    s.check_timestep(t);
    const double a = std::sqrt(s.gamma(t));
    const double b = std::sqrt(1.0 - s.gamma(t));
    Tensor out(x0.shape);
    for (std::size_t i = 0; i < x0.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Tensor q_step(const Tensor& x_prev, int t, const Tensor& eps, const NoiseSchedule& s) {
    require_same_shape(x_prev, eps, "q_step");
    const double a = std::sqrt(s.alpha(t));
    const double b = std::sqrt(1.0 - s.alpha(t));
    Tensor out(x_prev.shape);
    for (std::size_t i = 0; i < x_prev.data.size(); ++i) out.data[i] = a * x_prev.data[i] + b * eps.data[i];
    return out;
}

PosteriorParams posterior_params(const Tensor& x0, const Tensor& x_t, int t, const NoiseSchedule& s) {
    require_same_shape(x0, x_t, "posterior_params");
    const double c0 = s.posterior_x0_coef(t);
    const double ct = s.posterior_xt_coef(t);
    PosteriorParams p;
    p.mean = Tensor(x0.shape);
    for (std::size_t i = 0; i < x0.data.size(); ++i) p.mean.data[i] = c0 * x0.data[i] + ct * x_t.data[i];
    p.variance = s.posterior_variance(t);
    return p;
}

Tensor predict_x0_from_eps(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s, bool clip) {
    require_same_shape(x_t, eps_hat, "predict_x0_from_eps");
    s.check_timestep(t);
    const double sg = std::sqrt(s.gamma(t));
    const double sn = std::sqrt(1.0 - s.gamma(t));
    Tensor out(x_t.shape);
    for (std::size_t i = 0; i < x_t.data.size(); ++i) {
        const double v = (x_t.data[i] - sn * eps_hat.data[i]) / sg;
        out.data[i] = clip ? std::clamp(v, -1.0, 1.0) : v;
    }
    return out;
}

namespace {

void check_batch(const Tensor& a, const std::vector<int>& t, const Tensor& b, const char* what) {
    require_same_shape(a, b, what);
    if (t.size() != static_cast<std::size_t>(a.shape.n)) {
        throw std::invalid_argument(std::string(what) + ": expected one timestep per example");
    }
}

}  // namespace

Tensor q_sample_batch(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& s) {
    check_batch(x0, t, eps, "q_sample_batch");
    Tensor out(x0.shape);
    for (int n = 0; n < x0.shape.n; ++n) {
        s.check_timestep(t[n]);
        const double a = std::sqrt(s.gamma(t[n]));
        const double b = std::sqrt(1.0 - s.gamma(t[n]));
        auto xs = x0.example(n);
        auto es = eps.example(n);
        auto os = out.example(n);
        for (std::size_t i = 0; i < xs.size(); ++i) os[i] = a * xs[i] + b * es[i];
    }
    return out;
}

Tensor predict_x0_from_eps_batch(const Tensor& x_t, const std::vector<int>& t, const Tensor& eps_hat,
                                 const NoiseSchedule& s, bool clip) {
    check_batch(x_t, t, eps_hat, "predict_x0_from_eps_batch");
    Tensor out(x_t.shape);
    for (int n = 0; n < x_t.shape.n; ++n) {
        s.check_timestep(t[n]);
        const double sg = std::sqrt(s.gamma(t[n]));
        const double sn = std::sqrt(1.0 - s.gamma(t[n]));
        auto xs = x_t.example(n);
        auto es = eps_hat.example(n);
        auto os = out.example(n);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double v = (xs[i] - sn * es[i]) / sg;
            os[i] = clip ? std::clamp(v, -1.0, 1.0) : v;
        }
    }
    return out;
}

}  // namespace cimd
