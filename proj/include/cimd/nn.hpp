#pragma once

// Forward/backward kernels for the small set of layers the networks need.
// Backward functions accumulate into parameter gradients (+=) and return the
// gradient with respect to the layer input.

#include "cimd/tensor.hpp"

#include <vector>

namespace cimd::nn {

// weight (Cout, Cin, k, k), bias (1, Cout, 1, 1) or nullptr. Stride 1, "same" output
// size for k = 3 with pad = 1 and for k = 1 with pad = 0.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, int pad);
// grad_x is skipped (returns empty tensor) when need_grad_x is false.
Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, int pad,
                       Tensor& grad_weight, Tensor* grad_bias, bool need_grad_x = true);

// weight (Out, In, 1, 1), bias (1, Out, 1, 1); x (N, In, 1, 1).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor& grad_weight,
                       Tensor& grad_bias);

struct GroupNormCache {
    int groups = 1;
    std::vector<double> mean;  // (N, G)
    std::vector<double> rstd;  // (N, G)
};
inline constexpr double kGroupNormEps = 1e-5;
int group_count(int channels);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, GroupNormCache& cache);
Tensor group_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_y,
                           const GroupNormCache& cache, Tensor& grad_gamma, Tensor& grad_beta);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_y);
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_y);

// 2x2 average pooling, stride 2, ceil mode (partial windows average their valid cells).
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Shape& x_shape, const Tensor& grad_y);

Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_y);

Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& grad_y);

// x (N, C, H, W) += e (N, C, 1, 1) broadcast over space.
void add_channel_bias(Tensor& x, const Tensor& e);
Tensor channel_bias_backward(const Tensor& grad_y);

// Sinusoidal embedding of integer timesteps: (N, dim, 1, 1), dim even.
Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace cimd::nn
