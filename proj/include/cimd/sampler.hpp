#pragma once

#include "cimd/metrics.hpp"
#include "cimd/model.hpp"
#include "cimd/params.hpp"
#include "cimd/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cimd {

struct SampleRequest {
    Tensor b;  // (1, prior_channels, H, W)
    int n = 4;
    std::uint64_t seed = 0;
    double binarize_threshold = 0.0;

    void validate() const;
};

struct SamplerOptions {
    // Drop the fresh noise at every step, leaving x_T as the only random input.
    bool zero_noise = false;
    // Optional fixed starting states (n, 1, H, W) instead of drawing x_T.
    const Tensor* x_T = nullptr;
};

// Final reverse-chain states x_0 for each chain, before thresholding: (n, 1, H, W).
Tensor sample_states(const Model& model, const ParamMap& params, const SampleRequest& req,
                     const SamplerOptions& opt = {});

MaskSet sample_masks(const Model& model, const ParamMap& params, const SampleRequest& req,
                     const SamplerOptions& opt = {});

struct TrajectoryOptions {
    int stride = 10;                              // K
    std::size_t max_bytes = std::size_t{1} << 28;  // refuse larger trajectories
};

// x_T followed by every x_{t-1} with (t - 1) % K == 0; ceil(T / K) + 1 entries of (n, 1, H, W).
std::vector<Tensor> sample_trajectory(const Model& model, const ParamMap& params, const SampleRequest& req,
                                      const TrajectoryOptions& topt, const SamplerOptions& opt = {});

}  // namespace cimd
