#include "cimd/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cimd::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void check_conv_args(const Tensor& x, const Tensor& weight, int pad) {
    const int k = weight.shape.h;
    if (weight.shape.w != k || (k != 1 && k != 3)) throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
    if (2 * pad != k - 1) throw std::invalid_argument("conv2d: pad must preserve spatial size");
    if (x.shape.c != weight.shape.c) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape.c) + " channels, weight expects " +
                                    std::to_string(weight.shape.c));
    }
}

// col is (Cin*k*k, H*W), row-major.
void im2col(std::span<const double> x, int c, int h, int w, int k, int pad, RowMat& col) {
    col.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(h) * w);
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x.data() + static_cast<std::size_t>(ci) * h * w;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                double* row = col.data() + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * h * w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + kh - pad;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + kw - pad;
                        row[y * w + xx] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? plane[sy * w + sx] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const RowMat& col, int c, int h, int w, int k, int pad, std::span<double> gx) {
    for (int ci = 0; ci < c; ++ci) {
        double* plane = gx.data() + static_cast<std::size_t>(ci) * h * w;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const double* row = col.data() + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * h * w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + kh - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + kw - pad;
                        if (sx < 0 || sx >= w) continue;
                        plane[sy * w + sx] += row[y * w + xx];
                    }
                }
            }
        }
    }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, int pad) {
    check_conv_args(x, weight, pad);
    const int n = x.shape.n, cin = x.shape.c, h = x.shape.h, w = x.shape.w;
    const int cout = weight.shape.n, k = weight.shape.h;
    const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Tensor y(n, cout, h, w);
    ConstRowMap wm(weight.data.data(), cout, kk);
    RowMat col;
    for (int b = 0; b < n; ++b) {
        RowMap ym(y.example(b).data(), cout, hw);
        if (k == 1) {
            ConstRowMap xm(x.example(b).data(), cin, hw);
            ym.noalias() = wm * xm;
        } else {
            im2col(x.example(b), cin, h, w, k, pad, col);
            ym.noalias() = wm * col;
        }
        if (bias != nullptr) {
            for (int o = 0; o < cout; ++o) ym.row(o).array() += bias->data[o];
        }
    }
    return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, int pad, Tensor& grad_weight,
                       Tensor* grad_bias, bool need_grad_x) {
    check_conv_args(x, weight, pad);
    const int n = x.shape.n, cin = x.shape.c, h = x.shape.h, w = x.shape.w;
    const int cout = weight.shape.n, k = weight.shape.h;
    const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    ConstRowMap wm(weight.data.data(), cout, kk);
    RowMap gwm(grad_weight.data.data(), cout, kk);
    Tensor gx;
    if (need_grad_x) gx = Tensor(x.shape);
    RowMat col;
    RowMat gcol;
    for (int b = 0; b < n; ++b) {
        ConstRowMap gym(grad_y.example(b).data(), cout, hw);
        if (k == 1) {
            ConstRowMap xm(x.example(b).data(), cin, hw);
            gwm.noalias() += gym * xm.transpose();
            if (need_grad_x) {
                RowMap gxm(gx.example(b).data(), cin, hw);
                gxm.noalias() += wm.transpose() * gym;
            }
        } else {
            im2col(x.example(b), cin, h, w, k, pad, col);
            gwm.noalias() += gym * col.transpose();
            if (need_grad_x) {
                gcol.noalias() = wm.transpose() * gym;
                col2im_add(gcol, cin, h, w, k, pad, gx.example(b));
            }
        }
        if (grad_bias != nullptr) {
            // Plain loop: Eigen's vectorised sum peels by address, which would make the result
            // depend on where the allocator put the tensor.
            for (int o = 0; o < cout; ++o) {
                const double* row = grad_y.example(b).data() + static_cast<std::size_t>(o) * hw;
                double acc = 0.0;
                for (Eigen::Index i = 0; i < hw; ++i) acc += row[i];
                grad_bias->data[o] += acc;
            }
        }
    }
    return gx;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const int in = weight.shape.c, out = weight.shape.n;
    if (x.shape.per_example() != static_cast<std::size_t>(in)) {
        throw std::invalid_argument("linear: expected " + std::to_string(in) + " features, got " + x.shape.str());
    }
    Tensor y(x.shape.n, out, 1, 1);
    for (int b = 0; b < x.shape.n; ++b) {
        auto xs = x.example(b);
        for (int o = 0; o < out; ++o) {
            const double* wr = weight.data.data() + static_cast<std::size_t>(o) * in;
            double acc = bias.data[o];
            for (int i = 0; i < in; ++i) acc += wr[i] * xs[i];
            y.data[static_cast<std::size_t>(b) * out + o] = acc;
        }
    }
    return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor& grad_weight,
                       Tensor& grad_bias) {
    const int in = weight.shape.c, out = weight.shape.n;
    Tensor gx(x.shape);
    for (int b = 0; b < x.shape.n; ++b) {
        auto xs = x.example(b);
        auto gxs = gx.example(b);
        for (int o = 0; o < out; ++o) {
            const double g = grad_y.data[static_cast<std::size_t>(b) * out + o];
            const double* wr = weight.data.data() + static_cast<std::size_t>(o) * in;
            double* gwr = grad_weight.data.data() + static_cast<std::size_t>(o) * in;
            grad_bias.data[o] += g;
            for (int i = 0; i < in; ++i) {
                gwr[i] += g * xs[i];
                gxs[i] += g * wr[i];
            }
        }
    }
    return gx;
}

int group_count(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0 && channels / g >= 4) return g;
    }
    return 1;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, GroupNormCache& cache) {
    const int n = x.shape.n, c = x.shape.c;
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int cg = c / groups;
    const std::size_t plane = x.shape.plane();
    const double m = static_cast<double>(cg) * static_cast<double>(plane);
    cache.groups = groups;
    cache.mean.assign(static_cast<std::size_t>(n) * groups, 0.0);
    cache.rstd.assign(static_cast<std::size_t>(n) * groups, 0.0);
    Tensor y(x.shape);
    for (int b = 0; b < n; ++b) {
        for (int g = 0; g < groups; ++g) {
            double sum = 0.0;
            for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
                for (double v : x.channel(b, ci)) sum += v;
            }
            const double mean = sum / m;
            double var = 0.0;
            for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
                for (double v : x.channel(b, ci)) var += (v - mean) * (v - mean);
            }
            var /= m;
            const double rstd = 1.0 / std::sqrt(var + kGroupNormEps);
            cache.mean[static_cast<std::size_t>(b) * groups + g] = mean;
            cache.rstd[static_cast<std::size_t>(b) * groups + g] = rstd;
            for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
                auto xs = x.channel(b, ci);
                auto ys = y.channel(b, ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    ys[i] = (xs[i] - mean) * rstd * gamma.data[ci] + beta.data[ci];
                }
            }
        }
    }
    return y;
}

Tensor group_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_y, const GroupNormCache& cache,
                           Tensor& grad_gamma, Tensor& grad_beta) {
    const int n = x.shape.n, c = x.shape.c, groups = cache.groups;
    const int cg = c / groups;
    const std::size_t plane = x.shape.plane();
    const double m = static_cast<double>(cg) * static_cast<double>(plane);
    Tensor gx(x.shape);
    for (int b = 0; b < n; ++b) {
        for (int g = 0; g < groups; ++g) {
            const double mean = cache.mean[static_cast<std::size_t>(b) * groups + g];
            const double rstd = cache.rstd[static_cast<std::size_t>(b) * groups + g];
            double sum_dxhat = 0.0;
            double sum_dxhat_xhat = 0.0;
            for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
                auto xs = x.channel(b, ci);
                auto gys = grad_y.channel(b, ci);
                double gg = 0.0, gb = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xs[i] - mean) * rstd;
                    const double dxhat = gys[i] * gamma.data[ci];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    gg += gys[i] * xhat;
                    gb += gys[i];
                }
                grad_gamma.data[ci] += gg;
                grad_beta.data[ci] += gb;
            }
            for (int ci = g * cg; ci < (g + 1) * cg; ++ci) {
                auto xs = x.channel(b, ci);
                auto gys = grad_y.channel(b, ci);
                auto gxs = gx.channel(b, ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xs[i] - mean) * rstd;
                    const double dxhat = gys[i] * gamma.data[ci];
                    gxs[i] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
        }
    }
    return gx;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * sigmoid(x.data[i]);
    return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_y) {
    Tensor gx(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double s = sigmoid(x.data[i]);
        gx.data[i] = grad_y.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
    }
    return gx;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
    Tensor gx(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) gx.data[i] = x.data[i] > 0.0 ? grad_y.data[i] : 0.0;
    return gx;
}

Tensor avg_pool2(const Tensor& x) {
    const int oh = (x.shape.h + 1) / 2, ow = (x.shape.w + 1) / 2;
    Tensor y(x.shape.n, x.shape.c, oh, ow);
    for (int b = 0; b < x.shape.n; ++b) {
        for (int c = 0; c < x.shape.c; ++c) {
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    double sum = 0.0;
                    int cnt = 0;
                    for (int di = 0; di < 2; ++di) {
                        for (int dj = 0; dj < 2; ++dj) {
                            const int si = 2 * i + di, sj = 2 * j + dj;
                            if (si < x.shape.h && sj < x.shape.w) {
                                sum += x.at(b, c, si, sj);
                                ++cnt;
                            }
                        }
                    }
                    y.at(b, c, i, j) = sum / cnt;
                }
            }
        }
    }
    return y;
}

Tensor avg_pool2_backward(const Shape& x_shape, const Tensor& grad_y) {
    Tensor gx(x_shape);
    const int oh = grad_y.shape.h, ow = grad_y.shape.w;
    for (int b = 0; b < x_shape.n; ++b) {
        for (int c = 0; c < x_shape.c; ++c) {
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j) {
                    const int rows = std::min(2, x_shape.h - 2 * i);
                    const int cols = std::min(2, x_shape.w - 2 * j);
                    const double g = grad_y.at(b, c, i, j) / (rows * cols);
                    for (int di = 0; di < rows; ++di) {
                        for (int dj = 0; dj < cols; ++dj) gx.at(b, c, 2 * i + di, 2 * j + dj) += g;
                    }
                }
            }
        }
    }
    return gx;
}

Tensor upsample2(const Tensor& x) {
    Tensor y(x.shape.n, x.shape.c, 2 * x.shape.h, 2 * x.shape.w);
    for (int b = 0; b < x.shape.n; ++b) {
        for (int c = 0; c < x.shape.c; ++c) {
            for (int i = 0; i < y.shape.h; ++i) {
                for (int j = 0; j < y.shape.w; ++j) y.at(b, c, i, j) = x.at(b, c, i / 2, j / 2);
            }
        }
    }
    return y;
}

Tensor upsample2_backward(const Tensor& grad_y) {
    Tensor gx(grad_y.shape.n, grad_y.shape.c, grad_y.shape.h / 2, grad_y.shape.w / 2);
    for (int b = 0; b < grad_y.shape.n; ++b) {
        for (int c = 0; c < grad_y.shape.c; ++c) {
            for (int i = 0; i < grad_y.shape.h; ++i) {
                for (int j = 0; j < grad_y.shape.w; ++j) gx.at(b, c, i / 2, j / 2) += grad_y.at(b, c, i, j);
            }
        }
    }
    return gx;
}

Tensor global_avg_pool(const Tensor& x) {
    Tensor y(x.shape.n, x.shape.c, 1, 1);
    const double inv = 1.0 / static_cast<double>(x.shape.plane());
    for (int b = 0; b < x.shape.n; ++b) {
        for (int c = 0; c < x.shape.c; ++c) {
            double sum = 0.0;
            for (double v : x.channel(b, c)) sum += v;
            y.at(b, c, 0, 0) = sum * inv;
        }
    }
    return y;
}

Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& grad_y) {
    Tensor gx(x_shape);
    const double inv = 1.0 / static_cast<double>(x_shape.plane());
    for (int b = 0; b < x_shape.n; ++b) {
        for (int c = 0; c < x_shape.c; ++c) {
            const double g = grad_y.at(b, c, 0, 0) * inv;
            for (double& v : gx.channel(b, c)) v = g;
        }
    }
    return gx;
}

void add_channel_bias(Tensor& x, const Tensor& e) {
    if (e.shape.n != x.shape.n || e.shape.c != x.shape.c) {
        throw std::invalid_argument("add_channel_bias: " + e.shape.str() + " does not match " + x.shape.str());
    }
    for (int b = 0; b < x.shape.n; ++b) {
        for (int c = 0; c < x.shape.c; ++c) {
            const double v = e.at(b, c, 0, 0);
            for (double& p : x.channel(b, c)) p += v;
        }
    }
}

Tensor channel_bias_backward(const Tensor& grad_y) {
    Tensor ge(grad_y.shape.n, grad_y.shape.c, 1, 1);
    for (int b = 0; b < grad_y.shape.n; ++b) {
        for (int c = 0; c < grad_y.shape.c; ++c) {
            double sum = 0.0;
            for (double v : grad_y.channel(b, c)) sum += v;
            ge.at(b, c, 0, 0) = sum;
        }
    }
    return ge;
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
    if (dim % 2 != 0 || dim <= 0) throw std::invalid_argument("timestep_embedding: dim must be positive and even");
    const int half = dim / 2;
    Tensor e(static_cast<int>(t.size()), dim, 1, 1);
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = static_cast<double>(t[b]) * freq;
            e.data[b * dim + i] = std::sin(arg);
            e.data[b * dim + half + i] = std::cos(arg);
        }
    }
    return e;
}

}  // namespace cimd::nn
