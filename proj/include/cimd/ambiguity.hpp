#pragma once

#include "cimd/nn.hpp"
#include "cimd/params.hpp"
#include "cimd/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cimd {

enum class CovarianceMode { AxisAligned, Full };

std::string to_string(CovarianceMode m);
CovarianceMode covariance_mode_from_string(const std::string& s);

// N-dimensional Gaussian. `scale` holds the standard deviations (axis-aligned) or the
// row-major N x N lower-triangular Cholesky factor (full).
struct LatentGaussian {
    CovarianceMode mode = CovarianceMode::AxisAligned;
    std::vector<double> mean;
    std::vector<double> scale;

    int dim() const { return static_cast<int>(mean.size()); }
    // Throws std::invalid_argument on non-positive sigma / Cholesky diagonal or bad sizes.
    void validate() const;

    static LatentGaussian axis_aligned(std::vector<double> mean, std::vector<double> sigma);
    static LatentGaussian full(std::vector<double> mean, std::vector<double> cholesky);
};

struct KlGradients {
    std::vector<double> mean_q, scale_q;
    std::vector<double> mean_p, scale_p;
};

// Closed-form KL(q || p). Both arguments must share dimension and covariance mode.
// When `grads` is given, it receives d KL / d (mean, scale) for both arguments; for the
// full mode only lower-triangular entries are populated.
double kl_divergence(const LatentGaussian& q, const LatentGaussian& p, KlGradients* grads = nullptr);

// z = mean + L eps (full) or mean + sigma * eps (axis-aligned).
std::vector<double> reparam_sample(const LatentGaussian& g, std::span<const double> eps);
// Gradients of a scalar loss through reparam_sample, given dLoss/dz.
void reparam_sample_backward(const LatentGaussian& g, std::span<const double> eps, std::span<const double> grad_z,
                             std::vector<double>& grad_mean, std::vector<double>& grad_scale);

// Sigma = L L^T (row-major N x N). Throws on a non-positive diagonal.
std::vector<double> build_covariance(std::span<const double> cholesky, int n);

struct AmbiguityNetConfig {
    std::vector<int> filters{32, 64, 128, 192};
    int latent_dim = 6;
    CovarianceMode covariance_mode = CovarianceMode::AxisAligned;
    int prior_channels = 1;

    void validate() const;
    // Raw head width: mean and diagonal scale, plus strictly-lower entries in full mode.
    int head_outputs() const;
};

inline constexpr double kScaleFloor = 1e-5;

struct AmbiguityCache {
    Tensor input;
    Tensor t_channel;
    std::vector<Tensor> conv_in;   // input of each conv stage
    std::vector<Tensor> pre_act;   // conv output before ReLU
    std::vector<Tensor> post_act;  // ReLU output (pool input)
    Shape final_shape;             // spatial features entering global pooling
    Tensor pooled;                 // global-average-pooled features
    Tensor raw;                    // head output (N, head_outputs, 1, 1)
};

// Encoder shared by AMN and ACN: four 3x3 conv stages (ReLU + 2x2 average pooling),
// global average pooling and a 1x1 head. The ACN variant adds a constant t/T input
// channel, realised as a separate bias-free 3x3 kernel on the first stage so the rest of
// the weights have the same layout as AMN.
class AmbiguityNet {
public:
    enum class Kind { Modeling, Controlling };

    AmbiguityNet(Kind kind, AmbiguityNetConfig cfg);

    Kind kind() const { return kind_; }
    const AmbiguityNetConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }

    void init_params(ParamMap& params, std::uint64_t seed) const;
    // Names of the strictly-lower Cholesky head parameters (empty in axis-aligned mode).
    std::vector<std::string> offdiag_param_names() const;

    // b: (N, prior_channels, H, W); mask: (N, 1, H, W); t_frac: t/T per example (ACN only).
    Tensor forward_raw(const ParamMap& params, const Tensor& b, const Tensor& mask, const std::vector<double>& t_frac,
                       AmbiguityCache* cache = nullptr) const;
    // Returns dLoss/dmask (N, 1, H, W).
    Tensor backward_raw(const ParamMap& params, const AmbiguityCache& cache, const Tensor& grad_raw,
                        ParamMap& grads) const;

    std::vector<LatentGaussian> to_gaussians(const Tensor& raw) const;
    // Map per-example (mean, scale) gradients back onto the raw head output.
    Tensor gaussian_grads_to_raw(const Tensor& raw, const std::vector<std::vector<double>>& grad_mean,
                                 const std::vector<std::vector<double>>& grad_scale) const;

private:
    std::string pname(const std::string& leaf) const { return prefix_ + leaf; }

    Kind kind_;
    AmbiguityNetConfig cfg_;
    std::string prefix_;
};

// Q(. | b, x_b): distribution of ground-truth masks given the image.
std::vector<LatentGaussian> amn_forward(const ParamMap& params, const AmbiguityNetConfig& cfg, const Tensor& b,
                                        const Tensor& x_b);
// P(. | b, x_hat_b, t): distribution of the denoiser's reconstructions at step t.
std::vector<LatentGaussian> acn_forward(const ParamMap& params, const AmbiguityNetConfig& cfg, const Tensor& b,
                                        const Tensor& x_hat_b, const std::vector<int>& t, int T);

}  // namespace cimd
