#include "cimd/params.hpp"

#include <cmath>

namespace cimd {

ParamMap zeros_like(const ParamMap& params) {
    ParamMap out;
    for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape));
    return out;
}

ParamMap filter_prefix(const ParamMap& params, std::string_view prefix) {
    ParamMap out;
    for (const auto& [name, t] : params) {
        if (name.starts_with(prefix)) out.emplace(name, t);
    }
    return out;
}

std::size_t parameter_count(const ParamMap& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

const Tensor& get_param(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    return it->second;
}

Tensor& get_param(ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    return it->second;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b) {
    const std::uint64_t k = splitmix64(splitmix64(splitmix64(seed) ^ stream_a) ^ (stream_b * 0xd1b54a32d192ed03ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
                      static_cast<std::uint32_t>(stream_a), static_cast<std::uint32_t>(stream_b)};
    return std::mt19937_64(seq);
}

void fill_normal(std::span<double> out, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : out) v = dist(rng);
}

void init_uniform(ParamMap& params, const std::string& name, Shape shape, int fan_in, std::uint64_t seed,
                  double gain) {
    Tensor t(shape);
    auto rng = make_rng(seed, fnv1a64(name));
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data) v = dist(rng);
    params[name] = std::move(t);
}

void init_constant(ParamMap& params, const std::string& name, Shape shape, double value) {
    params[name] = Tensor(shape, value);
}

void Adam::step(ParamMap& params, const ParamMap& grads, const std::set<std::string>& frozen) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (frozen.contains(name)) continue;
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        require_same_shape(p, g, "Adam::step");
        auto [mit, m_new] = m_.try_emplace(name, Tensor(p.shape));
        auto [vit, v_new] = v_.try_emplace(name, Tensor(p.shape));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace cimd
