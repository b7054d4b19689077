#pragma once

#include "cimd/params.hpp"
#include "cimd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using cimd::ParamMap;
using cimd::Tensor;

inline Tensor random_tensor(cimd::Shape s, std::uint64_t seed, double scale = 1.0) {
    Tensor t(s);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    for (double& v : t.data) v = nd(rng);
    return t;
}

inline Tensor random_signs(cimd::Shape s, std::uint64_t seed) {
    Tensor t(s);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    for (double& v : t.data) v = coin(rng) ? 1.0 : -1.0;
    return t;
}

struct GradCheck {
    std::string worst_name;
    double worst = 0.0;
    int checked = 0;
};

// Central differences on up to `per_tensor` entries of every parameter whose name starts
// with `prefix`. Per tensor: ||fd - an|| / max(||fd||, ||an||, floor).
inline GradCheck check_gradients(ParamMap params, const ParamMap& analytic, const std::function<double(const ParamMap&)>& loss,
                                 const std::string& prefix = "", int per_tensor = 4, double h = 1e-5, double floor = 1e-9) {
    GradCheck out;
    for (auto& [name, tensor] : params) {
        if (name.rfind(prefix, 0) != 0) continue;
        const Tensor& an = analytic.at(name);
        const std::size_t n = tensor.size();
        const std::size_t count = std::min<std::size_t>(n, per_tensor);
        double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t idx = (k * 7919 + name.size() * 31) % n;
            const double orig = tensor.data[idx];
            tensor.data[idx] = orig + h;
            const double lp = loss(params);
            tensor.data[idx] = orig - h;
            const double lm = loss(params);
            tensor.data[idx] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            diff2 += (fd - an.data[idx]) * (fd - an.data[idx]);
            fd2 += fd * fd;
            an2 += an.data[idx] * an.data[idx];
        }
        const double rel = std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(an2), floor});
        ++out.checked;
        if (rel > out.worst) {
            out.worst = rel;
            out.worst_name = name;
        }
    }
    return out;
}

}  // namespace testsupport
