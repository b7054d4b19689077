#include "cimd/ambiguity.hpp"

#include "cimd/errors.hpp"

#include <cmath>

namespace cimd {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_pair(const LatentGaussian& q, const LatentGaussian& p) {
    q.validate();
    p.validate();
    if (q.dim() != p.dim()) throw std::invalid_argument("kl_divergence: latent dimensions differ");
    if (q.mode != p.mode) throw std::invalid_argument("kl_divergence: covariance modes differ");
}

// Solve L X = B for lower-triangular L (row-major n x n), B with `cols` columns.
std::vector<double> forward_solve(const std::vector<double>& L, const std::vector<double>& B, int n, int cols) {
    std::vector<double> X(static_cast<std::size_t>(n) * cols, 0.0);
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int k = 0; k < i; ++k) acc += L[i * n + k] * X[k * cols + j];
            X[i * cols + j] = (B[i * cols + j] - acc) / L[i * n + i];
        }
    }
    return X;
}

// Solve L^T X = B.
std::vector<double> backward_solve_transposed(const std::vector<double>& L, const std::vector<double>& B, int n,
                                              int cols) {
    std::vector<double> X(static_cast<std::size_t>(n) * cols, 0.0);
    for (int j = 0; j < cols; ++j) {
        for (int i = n - 1; i >= 0; --i) {
            double acc = 0.0;
            for (int k = i + 1; k < n; ++k) acc += L[k * n + i] * X[k * cols + j];
            X[i * cols + j] = (B[i * cols + j] - acc) / L[i * n + i];
        }
    }
    return X;
}

// The axis-aligned closed form is written with the same grouping of operations as the
// Cholesky path so that a diagonal L reproduces it bit-for-bit.
double kl_axis_aligned(const LatentGaussian& q, const LatentGaussian& p, KlGradients* grads) {
    const int n = q.dim();
    double tr = 0.0, quad = 0.0, logdet_p = 0.0, logdet_q = 0.0;
    std::vector<double> r(n), a(n);
    for (int i = 0; i < n; ++i) {
        r[i] = q.scale[i] / p.scale[i];
        tr += r[i] * r[i];
    }
    for (int i = 0; i < n; ++i) {
        a[i] = (p.mean[i] - q.mean[i]) / p.scale[i];
        quad += a[i] * a[i];
    }
    for (int i = 0; i < n; ++i) {
        logdet_p += std::log(p.scale[i]);
        logdet_q += std::log(q.scale[i]);
    }
    const double kl = 0.5 * (tr + quad - n) + (logdet_p - logdet_q);
    if (grads != nullptr) {
        grads->mean_q.assign(n, 0.0);
        grads->mean_p.assign(n, 0.0);
        grads->scale_q.assign(n, 0.0);
        grads->scale_p.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
            const double sp = p.scale[i];
            grads->mean_p[i] = a[i] / sp;
            grads->mean_q[i] = -grads->mean_p[i];
            grads->scale_q[i] = r[i] / sp - 1.0 / q.scale[i];
            grads->scale_p[i] = -((r[i] * r[i] + a[i] * a[i]) / sp) + 1.0 / sp;
        }
    }
    return kl;
}

double kl_full(const LatentGaussian& q, const LatentGaussian& p, KlGradients* grads) {
    const int n = q.dim();
    const auto& Lq = q.scale;
    const auto& Lp = p.scale;
    const std::vector<double> M = forward_solve(Lp, Lq, n, n);
    std::vector<double> d(n);
    for (int i = 0; i < n; ++i) d[i] = p.mean[i] - q.mean[i];
    const std::vector<double> a = forward_solve(Lp, d, n, 1);

    double tr = 0.0, quad = 0.0, logdet_p = 0.0, logdet_q = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) tr += M[i * n + j] * M[i * n + j];
    }
    for (int i = 0; i < n; ++i) quad += a[i] * a[i];
    for (int i = 0; i < n; ++i) {
        logdet_p += std::log(Lp[i * n + i]);
        logdet_q += std::log(Lq[i * n + i]);
    }
    const double kl = 0.5 * (tr + quad - n) + (logdet_p - logdet_q);

    if (grads != nullptr) {
        const std::vector<double> gmu = backward_solve_transposed(Lp, a, n, 1);
        grads->mean_p = gmu;
        grads->mean_q.assign(n, 0.0);
        for (int i = 0; i < n; ++i) grads->mean_q[i] = -gmu[i];

        const std::vector<double> gq = backward_solve_transposed(Lp, M, n, n);
        std::vector<double> X(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double mm = 0.0;
                for (int k = 0; k < n; ++k) mm += M[i * n + k] * M[j * n + k];
                X[i * n + j] = mm + a[i] * a[j];
            }
        }
        const std::vector<double> gp = backward_solve_transposed(Lp, X, n, n);
        grads->scale_q.assign(static_cast<std::size_t>(n) * n, 0.0);
        grads->scale_p.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < i; ++j) {
                grads->scale_q[i * n + j] = gq[i * n + j];
                grads->scale_p[i * n + j] = -gp[i * n + j];
            }
            grads->scale_q[i * n + i] = gq[i * n + i] - 1.0 / Lq[i * n + i];
            grads->scale_p[i * n + i] = -gp[i * n + i] + 1.0 / Lp[i * n + i];
        }
    }
    return kl;
}

}  // namespace

std::string to_string(CovarianceMode m) { return m == CovarianceMode::Full ? "full" : "axis-aligned"; }

CovarianceMode covariance_mode_from_string(const std::string& s) {
    if (s == "axis-aligned" || s == "diagonal") return CovarianceMode::AxisAligned;
    if (s == "full") return CovarianceMode::Full;
    throw std::invalid_argument("unknown covariance mode '" + s + "' (expected axis-aligned or full)");
}

void LatentGaussian::validate() const {
    const int n = dim();
    if (n == 0) throw std::invalid_argument("LatentGaussian: empty mean");
    if (mode == CovarianceMode::AxisAligned) {
        if (scale.size() != mean.size()) throw std::invalid_argument("LatentGaussian: sigma size mismatch");
        for (double s : scale) {
            if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("LatentGaussian: sigma must be positive");
        }
    } else {
        if (scale.size() != static_cast<std::size_t>(n) * n) {
            throw std::invalid_argument("LatentGaussian: Cholesky factor must be N x N");
        }
        for (int i = 0; i < n; ++i) {
            const double d = scale[i * n + i];
            if (!(d > 0.0) || !std::isfinite(d)) {
                throw std::invalid_argument("LatentGaussian: Cholesky diagonal must be positive (not positive definite)");
            }
            for (int j = i + 1; j < n; ++j) {
                if (scale[i * n + j] != 0.0) throw std::invalid_argument("LatentGaussian: Cholesky factor not lower-triangular");
            }
        }
    }
}

LatentGaussian LatentGaussian::axis_aligned(std::vector<double> mean, std::vector<double> sigma) {
    LatentGaussian g{CovarianceMode::AxisAligned, std::move(mean), std::move(sigma)};
    g.validate();
    return g;
}

LatentGaussian LatentGaussian::full(std::vector<double> mean, std::vector<double> cholesky) {
    LatentGaussian g{CovarianceMode::Full, std::move(mean), std::move(cholesky)};
    g.validate();
    return g;
}

double kl_divergence(const LatentGaussian& q, const LatentGaussian& p, KlGradients* grads) {
    check_pair(q, p);
    return q.mode == CovarianceMode::Full ? kl_full(q, p, grads) : kl_axis_aligned(q, p, grads);
}

std::vector<double> reparam_sample(const LatentGaussian& g, std::span<const double> eps) {
    const int n = g.dim();
    if (eps.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("reparam_sample: eps length != N");
    std::vector<double> z(g.mean);
    if (g.mode == CovarianceMode::AxisAligned) {
        for (int i = 0; i < n; ++i) z[i] += g.scale[i] * eps[i];
    } else {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) z[i] += g.scale[i * n + j] * eps[j];
        }
    }
    return z;
}

void reparam_sample_backward(const LatentGaussian& g, std::span<const double> eps, std::span<const double> grad_z,
                             std::vector<double>& grad_mean, std::vector<double>& grad_scale) {
    const int n = g.dim();
    grad_mean.assign(grad_z.begin(), grad_z.end());
    if (g.mode == CovarianceMode::AxisAligned) {
        grad_scale.assign(n, 0.0);
        for (int i = 0; i < n; ++i) grad_scale[i] = grad_z[i] * eps[i];
    } else {
        grad_scale.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) grad_scale[i * n + j] = grad_z[i] * eps[j];
        }
    }
}

std::vector<double> build_covariance(std::span<const double> L, int n) {
    if (L.size() != static_cast<std::size_t>(n) * n) throw std::invalid_argument("build_covariance: expected N x N");
    for (int i = 0; i < n; ++i) {
        if (!(L[i * n + i] > 0.0)) {
            throw std::invalid_argument("build_covariance: diagonal entry " + std::to_string(i) + " is not positive");
        }
        for (int j = i + 1; j < n; ++j) {
            if (L[i * n + j] != 0.0) throw std::invalid_argument("build_covariance: factor is not lower-triangular");
        }
    }
    std::vector<double> S(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k <= std::min(i, j); ++k) acc += L[i * n + k] * L[j * n + k];
            S[i * n + j] = acc;
        }
    }
    return S;
}

void AmbiguityNetConfig::validate() const {
    if (filters.empty()) throw std::invalid_argument("AmbiguityNetConfig: no filters");
    for (int f : filters) {
        if (f <= 0) throw std::invalid_argument("AmbiguityNetConfig: filter counts must be positive");
    }
    if (latent_dim <= 0) throw std::invalid_argument("AmbiguityNetConfig: latent_dim must be positive");
    if (prior_channels <= 0) throw std::invalid_argument("AmbiguityNetConfig: prior_channels must be positive");
}

int AmbiguityNetConfig::head_outputs() const {
    const int n = latent_dim;
    return covariance_mode == CovarianceMode::Full ? 2 * n + n * (n - 1) / 2 : 2 * n;
}

AmbiguityNet::AmbiguityNet(Kind kind, AmbiguityNetConfig cfg)
    : kind_(kind), cfg_(std::move(cfg)), prefix_(kind == Kind::Modeling ? "amn." : "acn.") {
    cfg_.validate();
}

void AmbiguityNet::init_params(ParamMap& params, std::uint64_t seed) const {
    int cin = cfg_.prior_channels + 1;
    for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
        const int f = cfg_.filters[i];
        const std::string s = "stage" + std::to_string(i);
        const int fan_in = (cin + (i == 0 && kind_ == Kind::Controlling ? 1 : 0)) * 9;
        init_uniform(params, pname(s + ".w"), {f, cin, 3, 3}, fan_in, seed);
        init_uniform(params, pname(s + ".b"), {1, f, 1, 1}, fan_in, seed);
        if (i == 0 && kind_ == Kind::Controlling) init_uniform(params, pname(s + ".tw"), {f, 1, 3, 3}, fan_in, seed);
        cin = f;
    }
    const int n = cfg_.latent_dim;
    init_uniform(params, pname("head.w"), {2 * n, cin, 1, 1}, cin, seed);
    init_uniform(params, pname("head.b"), {1, 2 * n, 1, 1}, cin, seed);
    if (cfg_.covariance_mode == CovarianceMode::Full && n > 1) {
        const int off = n * (n - 1) / 2;
        init_constant(params, pname("head_offdiag.w"), {off, cin, 1, 1}, 0.0);
        init_constant(params, pname("head_offdiag.b"), {1, off, 1, 1}, 0.0);
    }
}

std::vector<std::string> AmbiguityNet::offdiag_param_names() const {
    if (cfg_.covariance_mode != CovarianceMode::Full || cfg_.latent_dim < 2) return {};
    return {pname("head_offdiag.w"), pname("head_offdiag.b")};
}

Tensor AmbiguityNet::forward_raw(const ParamMap& params, const Tensor& b, const Tensor& mask,
                                 const std::vector<double>& t_frac, AmbiguityCache* cache) const {
    if (b.shape.n != mask.shape.n || b.shape.h != mask.shape.h || b.shape.w != mask.shape.w || mask.shape.c != 1) {
        throw std::invalid_argument(prefix_ + " input misaligned: " + b.shape.str() + " vs " + mask.shape.str());
    }
    if (b.shape.c != cfg_.prior_channels) throw std::invalid_argument(prefix_ + " prior channel count mismatch");
    if (kind_ == Kind::Controlling && t_frac.size() != static_cast<std::size_t>(b.shape.n)) {
        throw std::invalid_argument("acn: expected one timestep per example");
    }
    AmbiguityCache local;
    AmbiguityCache& c = cache != nullptr ? *cache : local;
    c.input = concat_channels({&b, &mask});
    c.conv_in.clear();
    c.pre_act.clear();
    c.post_act.clear();
    if (kind_ == Kind::Controlling) {
        c.t_channel = Tensor(b.shape.n, 1, b.shape.h, b.shape.w);
        for (int i = 0; i < b.shape.n; ++i) {
            for (double& v : c.t_channel.example(i)) v = t_frac[i];
        }
    }
    Tensor x = c.input;
    for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
        const std::string s = "stage" + std::to_string(i);
        const Tensor& bias = get_param(params, pname(s + ".b"));
        Tensor pre = nn::conv2d(x, get_param(params, pname(s + ".w")), &bias, 1);
        if (i == 0 && kind_ == Kind::Controlling) pre += nn::conv2d(c.t_channel, get_param(params, pname(s + ".tw")), nullptr, 1);
        Tensor post = nn::relu(pre);
        Tensor next = nn::avg_pool2(post);
        c.conv_in.push_back(std::move(x));
        c.pre_act.push_back(std::move(pre));
        c.post_act.push_back(std::move(post));
        x = std::move(next);
    }
    c.final_shape = x.shape;
    c.pooled = nn::global_avg_pool(x);
    Tensor raw = nn::linear(c.pooled, get_param(params, pname("head.w")), get_param(params, pname("head.b")));
    const auto off_names = offdiag_param_names();
    if (!off_names.empty()) {
        Tensor off = nn::linear(c.pooled, get_param(params, off_names[0]), get_param(params, off_names[1]));
        raw = concat_channels({&raw, &off});
    }
    if (!all_finite(raw)) throw DiagnosticError(prefix_ + " produced non-finite activations");
    c.raw = raw;
    return raw;
}

Tensor AmbiguityNet::backward_raw(const ParamMap& params, const AmbiguityCache& c, const Tensor& grad_raw,
                                  ParamMap& grads) const {
    const int n = cfg_.latent_dim;
    const auto off_names = offdiag_param_names();
    Tensor g_pooled;
    if (off_names.empty()) {
        g_pooled = nn::linear_backward(c.pooled, get_param(params, pname("head.w")), grad_raw,
                                       get_param(grads, pname("head.w")), get_param(grads, pname("head.b")));
    } else {
        auto parts = split_channels(grad_raw, {2 * n, n * (n - 1) / 2});
        g_pooled = nn::linear_backward(c.pooled, get_param(params, pname("head.w")), parts[0],
                                       get_param(grads, pname("head.w")), get_param(grads, pname("head.b")));
        g_pooled += nn::linear_backward(c.pooled, get_param(params, off_names[0]), parts[1],
                                        get_param(grads, off_names[0]), get_param(grads, off_names[1]));
    }
    Tensor g = nn::global_avg_pool_backward(c.final_shape, g_pooled);
    for (int i = static_cast<int>(cfg_.filters.size()) - 1; i >= 0; --i) {
        const std::string s = "stage" + std::to_string(i);
        g = nn::avg_pool2_backward(c.post_act[i].shape, g);
        g = nn::relu_backward(c.pre_act[i], g);
        if (i == 0 && kind_ == Kind::Controlling) {
            nn::conv2d_backward(c.t_channel, get_param(params, pname(s + ".tw")), g, 1,
                                get_param(grads, pname(s + ".tw")), nullptr, false);
        }
        g = nn::conv2d_backward(c.conv_in[i], get_param(params, pname(s + ".w")), g, 1,
                                get_param(grads, pname(s + ".w")), &get_param(grads, pname(s + ".b")));
    }
    return split_channels(g, {cfg_.prior_channels, 1})[1];
}

std::vector<LatentGaussian> AmbiguityNet::to_gaussians(const Tensor& raw) const {
    const int n = cfg_.latent_dim;
    const int r = cfg_.head_outputs();
    std::vector<LatentGaussian> out;
    out.reserve(static_cast<std::size_t>(raw.shape.n));
    for (int b = 0; b < raw.shape.n; ++b) {
        auto v = raw.example(b);
        if (v.size() != static_cast<std::size_t>(r)) throw std::invalid_argument("to_gaussians: raw width mismatch");
        LatentGaussian g;
        g.mode = cfg_.covariance_mode;
        g.mean.assign(v.begin(), v.begin() + n);
        if (g.mode == CovarianceMode::AxisAligned) {
            g.scale.resize(n);
            for (int i = 0; i < n; ++i) g.scale[i] = softplus(v[n + i]) + kScaleFloor;
        } else {
            g.scale.assign(static_cast<std::size_t>(n) * n, 0.0);
            for (int i = 0; i < n; ++i) g.scale[i * n + i] = softplus(v[n + i]) + kScaleFloor;
            int k = 2 * n;
            for (int i = 1; i < n; ++i) {
                for (int j = 0; j < i; ++j) g.scale[i * n + j] = v[k++];
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

Tensor AmbiguityNet::gaussian_grads_to_raw(const Tensor& raw, const std::vector<std::vector<double>>& grad_mean,
                                           const std::vector<std::vector<double>>& grad_scale) const {
    const int n = cfg_.latent_dim;
    Tensor g(raw.shape);
    for (int b = 0; b < raw.shape.n; ++b) {
        auto v = raw.example(b);
        auto gv = g.example(b);
        for (int i = 0; i < n; ++i) gv[i] = grad_mean[b][i];
        if (cfg_.covariance_mode == CovarianceMode::AxisAligned) {
            for (int i = 0; i < n; ++i) gv[n + i] = grad_scale[b][i] * sigmoid(v[n + i]);
        } else {
            for (int i = 0; i < n; ++i) gv[n + i] = grad_scale[b][i * n + i] * sigmoid(v[n + i]);
            int k = 2 * n;
            for (int i = 1; i < n; ++i) {
                for (int j = 0; j < i; ++j) gv[k++] = grad_scale[b][i * n + j];
            }
        }
    }
    return g;
}

std::vector<LatentGaussian> amn_forward(const ParamMap& params, const AmbiguityNetConfig& cfg, const Tensor& b,
                                        const Tensor& x_b) {
    AmbiguityNet net(AmbiguityNet::Kind::Modeling, cfg);
    return net.to_gaussians(net.forward_raw(params, b, x_b, {}));
}

std::vector<LatentGaussian> acn_forward(const ParamMap& params, const AmbiguityNetConfig& cfg, const Tensor& b,
                                        const Tensor& x_hat_b, const std::vector<int>& t, int T) {
    AmbiguityNet net(AmbiguityNet::Kind::Controlling, cfg);
    std::vector<double> frac;
    frac.reserve(t.size());
    for (int ti : t) frac.push_back(static_cast<double>(ti) / T);
    return net.to_gaussians(net.forward_raw(params, b, x_hat_b, frac));
}

}  // namespace cimd
