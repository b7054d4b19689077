#include "cimd/denoiser.hpp"

#include <cmath>

namespace cimd {

namespace {

std::string pname(const std::string& block, const char* leaf) { return std::string(Denoiser::kPrefix) + block + leaf; }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

void DenoiserConfig::validate() const {
    if (image_size <= 0 || base_channels <= 0 || prior_channels <= 0 || time_embed_dim <= 0) {
        throw std::invalid_argument("DenoiserConfig: sizes must be positive");
    }
    if (time_embed_dim % 2 != 0) throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even");
    if (channel_multipliers.empty()) throw std::invalid_argument("DenoiserConfig: channel_multipliers is empty");
    for (int m : channel_multipliers) {
        if (m <= 0) throw std::invalid_argument("DenoiserConfig: channel multipliers must be positive");
    }
    const int div = 1 << (levels() - 1);
    if (image_size % div != 0) {
        throw std::invalid_argument("DenoiserConfig: image_size " + std::to_string(image_size) +
                                    " is not divisible by " + std::to_string(div));
    }
}

Denoiser::Denoiser(DenoiserConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Denoiser::init_block(ParamMap& params, const std::string& name, int cin, int cout, std::uint64_t seed) const {
    init_constant(params, pname(name, ".gn1.g"), {1, cin, 1, 1}, 1.0);
    init_constant(params, pname(name, ".gn1.b"), {1, cin, 1, 1}, 0.0);
    init_uniform(params, pname(name, ".conv1.w"), {cout, cin, 3, 3}, cin * 9, seed);
    init_uniform(params, pname(name, ".conv1.b"), {1, cout, 1, 1}, cin * 9, seed);
    init_uniform(params, pname(name, ".temb.w"), {cout, temb_dim(), 1, 1}, temb_dim(), seed);
    init_uniform(params, pname(name, ".temb.b"), {1, cout, 1, 1}, temb_dim(), seed);
    init_constant(params, pname(name, ".gn2.g"), {1, cout, 1, 1}, 1.0);
    init_constant(params, pname(name, ".gn2.b"), {1, cout, 1, 1}, 0.0);
    init_uniform(params, pname(name, ".conv2.w"), {cout, cout, 3, 3}, cout * 9, seed);
    init_uniform(params, pname(name, ".conv2.b"), {1, cout, 1, 1}, cout * 9, seed);
    if (cin != cout) {
        init_uniform(params, pname(name, ".skip.w"), {cout, cin, 1, 1}, cin, seed);
        init_uniform(params, pname(name, ".skip.b"), {1, cout, 1, 1}, cin, seed);
    }
}

void Denoiser::init_params(ParamMap& params, std::uint64_t seed) const {
    const int in_ch = cfg_.prior_channels + 1;
    const int td = temb_dim();
    init_uniform(params, pname("time.lin1", ".w"), {td, td, 1, 1}, td, seed);
    init_uniform(params, pname("time.lin1", ".b"), {1, td, 1, 1}, td, seed);
    init_uniform(params, pname("time.lin2", ".w"), {td, td, 1, 1}, td, seed);
    init_uniform(params, pname("time.lin2", ".b"), {1, td, 1, 1}, td, seed);
    init_uniform(params, pname("stem", ".w"), {channels(0), in_ch, 3, 3}, in_ch * 9, seed);
    init_uniform(params, pname("stem", ".b"), {1, channels(0), 1, 1}, in_ch * 9, seed);
    int cur = channels(0);
    for (int i = 0; i < cfg_.levels(); ++i) {
        init_block(params, "down" + std::to_string(i), cur, channels(i), seed);
        cur = channels(i);
    }
    init_block(params, "mid", cur, cur, seed);
    for (int i = cfg_.levels() - 1; i >= 0; --i) {
        init_block(params, "up" + std::to_string(i), cur + channels(i), channels(i), seed);
        cur = channels(i);
    }
    init_constant(params, pname("out.gn", ".g"), {1, cur, 1, 1}, 1.0);
    init_constant(params, pname("out.gn", ".b"), {1, cur, 1, 1}, 0.0);
    init_uniform(params, pname("out.conv", ".w"), {2, cur, 3, 3}, cur * 9, seed, 0.1);
    init_uniform(params, pname("out.conv", ".b"), {1, 2, 1, 1}, cur * 9, seed, 0.1);
}

Tensor Denoiser::block_forward(const ParamMap& params, const std::string& name, const Tensor& x,
                               const Tensor& temb_act, ResBlockCache* cache) const {
    const Tensor& g1 = get_param(params, pname(name, ".gn1.g"));
    const Tensor& b1 = get_param(params, pname(name, ".gn1.b"));
    const Tensor& w1 = get_param(params, pname(name, ".conv1.w"));
    const Tensor& cb1 = get_param(params, pname(name, ".conv1.b"));
    const Tensor& g2 = get_param(params, pname(name, ".gn2.g"));
    const Tensor& b2 = get_param(params, pname(name, ".gn2.b"));
    const Tensor& w2 = get_param(params, pname(name, ".conv2.w"));
    const Tensor& cb2 = get_param(params, pname(name, ".conv2.b"));

    nn::GroupNormCache gn1, gn2;
    Tensor h1 = nn::group_norm(x, g1, b1, nn::group_count(x.shape.c), gn1);
    Tensor a1 = nn::silu(h1);
    Tensor c1 = nn::conv2d(a1, w1, &cb1, 1);
    nn::add_channel_bias(c1, nn::linear(temb_act, get_param(params, pname(name, ".temb.w")),
                                        get_param(params, pname(name, ".temb.b"))));
    Tensor h2 = nn::group_norm(c1, g2, b2, nn::group_count(c1.shape.c), gn2);
    Tensor a2 = nn::silu(h2);
    Tensor out = nn::conv2d(a2, w2, &cb2, 1);
    if (x.shape.c != out.shape.c) {
        const Tensor& sb = get_param(params, pname(name, ".skip.b"));
        out += nn::conv2d(x, get_param(params, pname(name, ".skip.w")), &sb, 0);
    } else {
        out += x;
    }
    if (cache != nullptr) {
        cache->x = x;
        cache->h1 = std::move(h1);
        cache->a1 = std::move(a1);
        cache->c1 = std::move(c1);
        cache->h2 = std::move(h2);
        cache->a2 = std::move(a2);
        cache->gn1 = std::move(gn1);
        cache->gn2 = std::move(gn2);
    }
    return out;
}

Tensor Denoiser::block_backward(const ParamMap& params, const std::string& name, const ResBlockCache& c,
                                const Tensor& temb_act, const Tensor& grad_out, ParamMap& grads,
                                Tensor& grad_temb_act) const {
    auto g = [&](const char* leaf) -> Tensor& { return get_param(grads, pname(name, leaf)); };
    const Tensor& w2 = get_param(params, pname(name, ".conv2.w"));
    const Tensor& w1 = get_param(params, pname(name, ".conv1.w"));

    Tensor g_a2 = nn::conv2d_backward(c.a2, w2, grad_out, 1, g(".conv2.w"), &g(".conv2.b"));
    Tensor g_h2 = nn::silu_backward(c.h2, g_a2);
    Tensor g_c1 = nn::group_norm_backward(c.c1, get_param(params, pname(name, ".gn2.g")), g_h2, c.gn2, g(".gn2.g"),
                                          g(".gn2.b"));
    Tensor g_e = nn::channel_bias_backward(g_c1);
    grad_temb_act += nn::linear_backward(temb_act, get_param(params, pname(name, ".temb.w")), g_e, g(".temb.w"),
                                         g(".temb.b"));
    Tensor g_a1 = nn::conv2d_backward(c.a1, w1, g_c1, 1, g(".conv1.w"), &g(".conv1.b"));
    Tensor g_h1 = nn::silu_backward(c.h1, g_a1);
    Tensor g_x = nn::group_norm_backward(c.x, get_param(params, pname(name, ".gn1.g")), g_h1, c.gn1, g(".gn1.g"),
                                         g(".gn1.b"));
    if (c.x.shape.c != grad_out.shape.c) {
        g_x += nn::conv2d_backward(c.x, get_param(params, pname(name, ".skip.w")), grad_out, 0, g(".skip.w"),
                                   &g(".skip.b"));
    } else {
        g_x += grad_out;
    }
    return g_x;
}

DenoiserOutput Denoiser::forward(const ParamMap& params, const Tensor& b, const Tensor& x_bt,
                                 const std::vector<int>& t, DenoiserCache* cache) const {
    if (b.shape.n != x_bt.shape.n || b.shape.h != x_bt.shape.h || b.shape.w != x_bt.shape.w) {
        throw std::invalid_argument("denoiser: prior " + b.shape.str() + " and noisy mask " + x_bt.shape.str() +
                                    " are not aligned");
    }
    if (b.shape.c != cfg_.prior_channels || x_bt.shape.c != 1) {
        throw std::invalid_argument("denoiser: expected " + std::to_string(cfg_.prior_channels) +
                                    " prior channels and a single mask channel");
    }
    if (b.shape.h != cfg_.image_size || b.shape.w != cfg_.image_size) {
        throw std::invalid_argument("denoiser: configured for " + std::to_string(cfg_.image_size) +
                                    "px images, got " + b.shape.str());
    }
    if (t.size() != static_cast<std::size_t>(b.shape.n)) {
        throw std::invalid_argument("denoiser: expected one timestep per example");
    }

    DenoiserCache local;
    DenoiserCache& c = cache != nullptr ? *cache : local;
    const bool keep = cache != nullptr;

    c.input = concat_channels({&b, &x_bt});
    c.temb_sin = nn::timestep_embedding(t, temb_dim());
    c.temb_h = nn::linear(c.temb_sin, get_param(params, pname("time.lin1", ".w")),
                          get_param(params, pname("time.lin1", ".b")));
    c.temb_a = nn::silu(c.temb_h);
    c.temb = nn::linear(c.temb_a, get_param(params, pname("time.lin2", ".w")),
                        get_param(params, pname("time.lin2", ".b")));
    c.temb_act = nn::silu(c.temb);

    const Tensor& stem_b = get_param(params, pname("stem", ".b"));
    c.stem = nn::conv2d(c.input, get_param(params, pname("stem", ".w")), &stem_b, 1);

    const int levels = cfg_.levels();
    c.down.assign(static_cast<std::size_t>(levels), {});
    c.up.assign(static_cast<std::size_t>(levels), {});
    c.down_out_shapes.clear();
    std::vector<Tensor> skips;
    Tensor h = c.stem;
    for (int i = 0; i < levels; ++i) {
        h = block_forward(params, "down" + std::to_string(i), h, c.temb_act, keep ? &c.down[i] : nullptr);
        skips.push_back(h);
        c.down_out_shapes.push_back(h.shape);
        if (i + 1 < levels) h = nn::avg_pool2(h);
    }
    h = block_forward(params, "mid", h, c.temb_act, keep ? &c.mid : nullptr);
    for (int i = levels - 1; i >= 0; --i) {
        Tensor cat = concat_channels({&h, &skips[i]});
        h = block_forward(params, "up" + std::to_string(i), cat, c.temb_act, keep ? &c.up[i] : nullptr);
        if (i > 0) h = nn::upsample2(h);
    }
    c.out_in = std::move(h);
    const Tensor& ob = get_param(params, pname("out.conv", ".b"));
    c.out_h = nn::group_norm(c.out_in, get_param(params, pname("out.gn", ".g")), get_param(params, pname("out.gn", ".b")),
                             nn::group_count(c.out_in.shape.c), c.out_gn);
    c.out_a = nn::silu(c.out_h);
    Tensor out = nn::conv2d(c.out_a, get_param(params, pname("out.conv", ".w")), &ob, 1);
    auto parts = split_channels(out, {1, 1});
    return {std::move(parts[0]), std::move(parts[1])};
}

void Denoiser::backward(const ParamMap& params, const DenoiserCache& c, const Tensor& grad_eps, const Tensor& grad_v,
                        ParamMap& grads) const {
    auto g = [&](const std::string& block, const char* leaf) -> Tensor& { return get_param(grads, pname(block, leaf)); };
    Tensor grad_out = concat_channels({&grad_eps, &grad_v});
    Tensor g_a = nn::conv2d_backward(c.out_a, get_param(params, pname("out.conv", ".w")), grad_out, 1,
                                     g("out.conv", ".w"), &g("out.conv", ".b"));
    Tensor g_hh = nn::silu_backward(c.out_h, g_a);
    Tensor gh = nn::group_norm_backward(c.out_in, get_param(params, pname("out.gn", ".g")), g_hh, c.out_gn,
                                        g("out.gn", ".g"), g("out.gn", ".b"));

    Tensor g_temb_act(c.temb_act.shape);
    const int levels = cfg_.levels();
    std::vector<Tensor> g_skips(static_cast<std::size_t>(levels));
    for (int i = 0; i < levels; ++i) {
        if (i > 0) gh = nn::upsample2_backward(gh);
        Tensor g_cat = block_backward(params, "up" + std::to_string(i), c.up[i], c.temb_act, gh, grads, g_temb_act);
        const int ch_h = g_cat.shape.c - c.down_out_shapes[i].c;
        auto parts = split_channels(g_cat, {ch_h, c.down_out_shapes[i].c});
        gh = std::move(parts[0]);
        g_skips[i] = std::move(parts[1]);
    }
    gh = block_backward(params, "mid", c.mid, c.temb_act, gh, grads, g_temb_act);
    for (int i = levels - 1; i >= 0; --i) {
        if (i + 1 < levels) gh = nn::avg_pool2_backward(c.down_out_shapes[i], gh);
        gh += g_skips[i];
        gh = block_backward(params, "down" + std::to_string(i), c.down[i], c.temb_act, gh, grads, g_temb_act);
    }
    nn::conv2d_backward(c.input, get_param(params, pname("stem", ".w")), gh, 1, g("stem", ".w"), &g("stem", ".b"),
                        false);

    Tensor g_temb = nn::silu_backward(c.temb, g_temb_act);
    Tensor g_ta = nn::linear_backward(c.temb_a, get_param(params, pname("time.lin2", ".w")), g_temb,
                                      g("time.lin2", ".w"), g("time.lin2", ".b"));
    Tensor g_th = nn::silu_backward(c.temb_h, g_ta);
    nn::linear_backward(c.temb_sin, get_param(params, pname("time.lin1", ".w")), g_th, g("time.lin1", ".w"),
                        g("time.lin1", ".b"));
}

DenoiserOutput denoise_forward(const ParamMap& params, const DenoiserConfig& cfg, const Tensor& b, const Tensor& x_bt,
                               const std::vector<int>& t) {
    return Denoiser(cfg).forward(params, b, x_bt, t);
}

Tensor interpolate_variance(const Tensor& v, int t, const NoiseSchedule& s) {
    const double log_max = std::log(s.beta(t));
    const double log_min = s.posterior_log_variance_clipped(t);
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double f = sigmoid(v.data[i]);
        out.data[i] = f * log_max + (1.0 - f) * log_min;
    }
    return out;
}

Tensor interpolate_variance_grad(const Tensor& v, int t, const NoiseSchedule& s) {
    const double span = std::log(s.beta(t)) - s.posterior_log_variance_clipped(t);
    Tensor out(v.shape);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double f = sigmoid(v.data[i]);
        out.data[i] = f * (1.0 - f) * span;
    }
    return out;
}

}  // namespace cimd
