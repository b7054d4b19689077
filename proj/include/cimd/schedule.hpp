#pragma once

#include "cimd/tensor.hpp"

#include <vector>

namespace cimd {

struct LinearScheduleConfig {
    double beta_start = 1e-4;
    double beta_end = 0.02;
    // Multiply both endpoints by 1000/T when T != 1000 so shorter chains inject a
    // comparable amount of noise overall.
    bool rescale = true;
};

struct PosteriorParams {
    Tensor mean;
    double variance = 0.0;
};

// Immutable per-timestep coefficients. Timesteps are 1-based: t in [1, T].
// gamma(0) == 1 by convention so the t = 1 posterior is well defined.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas);

    int T() const { return static_cast<int>(betas_.size()); }
    double beta(int t) const;
    double alpha(int t) const;
    double gamma(int t) const;  // accepts t = 0
    const std::vector<double>& betas() const { return betas_; }

    // Coefficients of the Gaussian posterior q(x_{t-1} | x_t, x_0).
    double posterior_variance(int t) const;
    double posterior_x0_coef(int t) const;
    double posterior_xt_coef(int t) const;
    // log of the posterior variance with the t = 1 entry (exactly zero variance) replaced
    // by the t = 2 value; used as the lower endpoint of the learned variance range.
    double posterior_log_variance_clipped(int t) const;

    void check_timestep(int t) const;

private:
    explicit NoiseSchedule(std::vector<double> betas);

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> gammas_;  // gammas_[0] == 1, gammas_[t] for t >= 1
};

NoiseSchedule make_linear_schedule(int T, const LinearScheduleConfig& cfg = {});

// sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
// One forward kernel step q(x_t | x_{t-1}): sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) eps
Tensor q_step(const Tensor& x_prev, int t, const Tensor& eps, const NoiseSchedule& s);

PosteriorParams posterior_params(const Tensor& x0, const Tensor& x_t, int t, const NoiseSchedule& s);

// (x_t - sqrt(1 - gamma_t) eps_hat) / sqrt(gamma_t), optionally clipped to [-1, 1].
Tensor predict_x0_from_eps(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s,
                           bool clip = true);

// Per-example variants: t[i] applies to example i of the batch.
Tensor q_sample_batch(const Tensor& x0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& s);
Tensor predict_x0_from_eps_batch(const Tensor& x_t, const std::vector<int>& t, const Tensor& eps_hat,
                                 const NoiseSchedule& s, bool clip = true);

}  // namespace cimd
