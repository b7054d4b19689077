#pragma once

#include "cimd/nn.hpp"
#include "cimd/params.hpp"
#include "cimd/schedule.hpp"
#include "cimd/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cimd {

struct DenoiserConfig {
    int image_size = 16;
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 4};
    int prior_channels = 1;
    int time_embed_dim = 32;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    void validate() const;
};

struct DenoiserOutput {
    Tensor eps_hat;  // (N, 1, H, W)
    Tensor v;        // (N, 1, H, W) variance-interpolation logits
};

struct ResBlockCache {
    Tensor x, h1, a1, c1, h2, a2;
    nn::GroupNormCache gn1, gn2;
};

struct DenoiserCache {
    Tensor input;
    Tensor temb_sin, temb_h, temb_a, temb, temb_act;
    Tensor stem;
    std::vector<ResBlockCache> down;
    ResBlockCache mid;
    std::vector<ResBlockCache> up;
    std::vector<Shape> down_out_shapes;
    Tensor out_in, out_h, out_a;
    nn::GroupNormCache out_gn;
};

// Small U-shaped encoder-decoder: residual blocks with group norm and SiLU, a
// sinusoidal timestep embedding added to every block, average-pool down-sampling,
// nearest up-sampling and skip concatenation. Input is b (prior_channels) concatenated
// with the noisy mask (1 channel); output is eps_hat and the variance logits v.
class Denoiser {
public:
    static constexpr const char* kPrefix = "denoiser.";

    explicit Denoiser(DenoiserConfig cfg);

    const DenoiserConfig& config() const { return cfg_; }

    void init_params(ParamMap& params, std::uint64_t seed) const;

    DenoiserOutput forward(const ParamMap& params, const Tensor& b, const Tensor& x_bt, const std::vector<int>& t,
                           DenoiserCache* cache = nullptr) const;

    // Accumulates parameter gradients for upstream gradients on eps_hat and v.
    void backward(const ParamMap& params, const DenoiserCache& cache, const Tensor& grad_eps, const Tensor& grad_v,
                  ParamMap& grads) const;

private:
    int channels(int level) const { return cfg_.base_channels * cfg_.channel_multipliers[level]; }
    int temb_dim() const { return cfg_.time_embed_dim; }

    void init_block(ParamMap& params, const std::string& name, int cin, int cout, std::uint64_t seed) const;
    Tensor block_forward(const ParamMap& params, const std::string& name, const Tensor& x, const Tensor& temb_act,
                         ResBlockCache* cache) const;
    Tensor block_backward(const ParamMap& params, const std::string& name, const ResBlockCache& cache,
                          const Tensor& temb_act, const Tensor& grad_out, ParamMap& grads, Tensor& grad_temb_act) const;

    DenoiserConfig cfg_;
};

// Spec-level entry point: deterministic forward pass with no cache.
DenoiserOutput denoise_forward(const ParamMap& params, const DenoiserConfig& cfg, const Tensor& b, const Tensor& x_bt,
                               const std::vector<int>& t);

// Learned-range variance: log var = f * log(beta_t) + (1 - f) * log(posterior var, clipped),
// f = sigmoid(v). Returns per-pixel log-variance.
Tensor interpolate_variance(const Tensor& v, int t, const NoiseSchedule& s);
// d(log var)/dv at each pixel.
Tensor interpolate_variance_grad(const Tensor& v, int t, const NoiseSchedule& s);

}  // namespace cimd
