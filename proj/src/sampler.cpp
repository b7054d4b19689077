#include "cimd/sampler.hpp"

#include "cimd/errors.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace cimd {

namespace {

using StepHook = std::function<void(int t, const Tensor& x_prev)>;

Tensor run_chain(const Model& model, const ParamMap& params, const SampleRequest& req, const SamplerOptions& opt,
                 const StepHook& hook) {
    req.validate();
    const NoiseSchedule& s = model.schedule();
    const int h = req.b.shape.h, w = req.b.shape.w;
    const Shape state{req.n, 1, h, w};

    // Each chain owns a generator derived from (seed, chain index).
    std::vector<std::mt19937_64> rngs;
    rngs.reserve(req.n);
    for (int i = 0; i < req.n; ++i) rngs.push_back(make_rng(req.seed, 0x5a3d1e, static_cast<std::uint64_t>(i)));

    Tensor x(state);
    if (opt.x_T != nullptr) {
        if (!(opt.x_T->shape == state)) throw std::invalid_argument("sampler: x_T shape " + opt.x_T->shape.str());
        x = *opt.x_T;
    } else {
        for (int i = 0; i < req.n; ++i) fill_normal(x.example(i), rngs[i]);
    }
    if (hook) hook(s.T() + 1, x);

    std::vector<Tensor> b_rep(req.n, req.b);
    const Tensor b = stack_examples(b_rep);
    Tensor z(state);
    for (int t = s.T(); t >= 1; --t) {
        const std::vector<int> ts(req.n, t);
        const DenoiserOutput out = model.denoiser().forward(params, b, x, ts);
        const Tensor logvar = interpolate_variance(out.v, t, s);
        const double a = s.alpha(t);
        const double k = (1.0 - a) / std::sqrt(1.0 - s.gamma(t));
        const double inv_sqrt_a = 1.0 / std::sqrt(a);
        const bool noisy = t > 1 && !opt.zero_noise;
        if (noisy) {
            for (int i = 0; i < req.n; ++i) fill_normal(z.example(i), rngs[i]);
        }
        for (std::size_t p = 0; p < x.size(); ++p) {
            double next = inv_sqrt_a * (x.data[p] - k * out.eps_hat.data[p]);
            if (noisy) next += std::exp(0.5 * logvar.data[p]) * z.data[p];
            x.data[p] = next;
        }
        if (!all_finite(x)) throw DiagnosticError("sampler: non-finite state at t=" + std::to_string(t));
        if (hook) hook(t, x);
    }
    return x;
}

}  // namespace

void SampleRequest::validate() const {
    if (n < 1) throw std::invalid_argument("SampleRequest: n must be >= 1");
    if (b.shape.n != 1) throw std::invalid_argument("SampleRequest: b must hold a single image");
    if (!(binarize_threshold > -1.0 && binarize_threshold < 1.0)) {
        throw std::invalid_argument("SampleRequest: threshold must lie in (-1, 1)");
    }
}

Tensor sample_states(const Model& model, const ParamMap& params, const SampleRequest& req, const SamplerOptions& opt) {
    return run_chain(model, params, req, opt, {});
}

MaskSet sample_masks(const Model& model, const ParamMap& params, const SampleRequest& req, const SamplerOptions& opt) {
    const Tensor x0 = sample_states(model, params, req, opt);
    MaskSet out;
    out.role = MaskRole::Prediction;
    for (int i = 0; i < req.n; ++i) {
        out.masks.push_back(Mask::threshold(x0.channel(i, 0), x0.shape.h, x0.shape.w, req.binarize_threshold));
    }
    return out;
}

std::vector<Tensor> sample_trajectory(const Model& model, const ParamMap& params, const SampleRequest& req,
                                      const TrajectoryOptions& topt, const SamplerOptions& opt) {
    req.validate();
    if (topt.stride < 1) throw std::invalid_argument("sample_trajectory: stride must be >= 1");
    const int T = model.schedule().T();
    const std::size_t entries = static_cast<std::size_t>((T + topt.stride - 1) / topt.stride) + 1;
    const std::size_t bytes = entries * static_cast<std::size_t>(req.n) * req.b.shape.plane() * sizeof(double);
    if (bytes > topt.max_bytes) {
        throw std::invalid_argument("sample_trajectory: " + std::to_string(bytes) + " bytes exceeds the cap of " +
                                    std::to_string(topt.max_bytes));
    }
    std::vector<Tensor> out;
    out.reserve(entries);
    // The hook sees x_T as "t = T + 1" and x_{t-1} after each step t.
    run_chain(model, params, req, opt, [&](int t, const Tensor& x) {
        if (t == T + 1 || (t - 1) % topt.stride == 0) out.push_back(x);
    });
    return out;
}

}  // namespace cimd
