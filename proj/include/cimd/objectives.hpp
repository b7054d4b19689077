#pragma once

#include "cimd/ambiguity.hpp"
#include "cimd/denoiser.hpp"
#include "cimd/model.hpp"
#include "cimd/schedule.hpp"
#include "cimd/tensor.hpp"

#include <functional>
#include <vector>

namespace cimd {

struct LossWeights {
    double lambda = 0.001;
    double beta = 0.001;

    void validate() const;
};

struct LossParts {
    double l_simple = 0.0;
    double l_vlb = 0.0;
    double l_amb = 0.0;
};

struct LossReport {
    double l_simple = 0.0;
    double l_vlb = 0.0;
    double l_amb = 0.0;
    double total = 0.0;
    bool simple_finite = true;
    bool vlb_finite = true;
    bool amb_finite = true;
};

// Mean squared error over every element. Writes d/d eps_hat when grad is given.
double l_simple(const Tensor& eps, const Tensor& eps_hat, Tensor* grad_eps_hat = nullptr);

// Elementwise KL(N(m1, exp(lv1)) || N(m2, exp(lv2))) in nats.
double normal_kl(double mean1, double logvar1, double mean2, double logvar2);
// log P(x in bin) under N(mean, exp(logvar)) for x in [-1, 1] with bins of width 2/255;
// the outermost bins extend to +-infinity. d/d logvar goes to grad_logvar when given.
double discretized_gaussian_log_likelihood(double x, double mean, double logvar, double* grad_logvar = nullptr);

// Variational term for one example at step t, in bits per pixel. x0, x_t, eps_hat and v
// are (1, 1, H, W). t > 1: KL(posterior || model); t == 1: decoder NLL of x0. The model
// mean treats eps_hat as a constant, so only v receives a gradient (grad_v, optional).
double l_vlb_term(const Tensor& x0, const Tensor& x_t, int t, const Tensor& eps_hat, const Tensor& v,
                  const NoiseSchedule& s, Tensor* grad_v = nullptr);

// KL(q(x_T | x0) || N(0, I)) in bits per pixel. Constant in the parameters.
double prior_bpd(const Tensor& x0, const NoiseSchedule& s);

// The full bound: prior term plus every per-step term, for one example. `model` returns
// (eps_hat, v) for (x_t, t). `eps_draws` supplies one noise image per step (index t-1).
using DenoiseFn = std::function<DenoiserOutput(const Tensor& x_t, int t)>;
double vlb_full(const Tensor& x0, const NoiseSchedule& s, const DenoiseFn& model, const std::vector<Tensor>& eps_draws);

// Mean of kl_divergence over a batch; per-example (q, p) gradients scaled by 1/N.
double l_amb(const std::vector<LatentGaussian>& q, const std::vector<LatentGaussian>& p,
             std::vector<KlGradients>* grads = nullptr);

// Weighted sum. Throws DiagnosticError naming the first non-finite part.
LossReport total_loss(const LossParts& parts, const LossWeights& w);

struct TrainBatch {
    Tensor b;            // (N, prior_channels, H, W)
    Tensor x0;           // (N, 1, H, W), masks in {-1, +1}
    std::vector<int> t;  // one timestep per example
    Tensor eps;          // (N, 1, H, W)
};

// Forward pass of every network on the batch, the weighted loss and, when grads is
// non-null, gradients of the total accumulated into it (zeros_like(params) layout).
// For models without ambiguity nets the ambiguity term is 0 whatever w.beta says.
LossReport forward_backward(const Model& model, const ParamMap& params, const TrainBatch& batch, const LossWeights& w,
                            ParamMap* grads);

}  // namespace cimd
