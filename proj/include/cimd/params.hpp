#pragma once

#include "cimd/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>

namespace cimd {

// Parameter arrays keyed by stable dotted names ("denoiser.in.w", "amn.head.b", ...).
using ParamMap = std::map<std::string, Tensor>;

ParamMap zeros_like(const ParamMap& params);
// Parameters whose name starts with prefix.
ParamMap filter_prefix(const ParamMap& params, std::string_view prefix);
std::size_t parameter_count(const ParamMap& params);

const Tensor& get_param(const ParamMap& params, const std::string& name);
Tensor& get_param(ParamMap& params, const std::string& name);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Independent generator for (seed, stream ids...); every random draw in the project goes
// through one of these so runs are a pure function of the user seed.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b = 0);

void fill_normal(std::span<double> out, std::mt19937_64& rng);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) seeded by (seed, name) so that adding a
// parameter never changes the initial values of the others.
void init_uniform(ParamMap& params, const std::string& name, Shape shape, int fan_in, std::uint64_t seed,
                  double gain = 1.0);
void init_constant(ParamMap& params, const std::string& name, Shape shape, double value);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam without weight decay. Parameters listed in `frozen` are never updated.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamMap& params, const ParamMap& grads, const std::set<std::string>& frozen = {});
    long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    ParamMap m_;
    ParamMap v_;
};

}  // namespace cimd
