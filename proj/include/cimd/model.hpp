#pragma once

#include "cimd/ambiguity.hpp"
#include "cimd/denoiser.hpp"
#include "cimd/params.hpp"
#include "cimd/schedule.hpp"

#include <cstdint>
#include <optional>

namespace cimd {

struct ModelConfig {
    int T = 100;
    LinearScheduleConfig schedule;
    DenoiserConfig denoiser;
    AmbiguityNetConfig ambiguity;
    // false for the plain DDPM arms: no AMN/ACN parameters exist at all.
    bool use_ambiguity = true;

    void validate() const;
};

// Everything needed to evaluate the networks apart from the parameter values.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const Denoiser& denoiser() const { return denoiser_; }
    bool has_ambiguity() const { return amn_.has_value(); }
    const AmbiguityNet& amn() const;
    const AmbiguityNet& acn() const;

    ParamMap init_params(std::uint64_t seed) const;

private:
    ModelConfig cfg_;
    NoiseSchedule schedule_;
    Denoiser denoiser_;
    std::optional<AmbiguityNet> amn_;
    std::optional<AmbiguityNet> acn_;
};

}  // namespace cimd
