#include "cimd/model.hpp"

#include <stdexcept>

namespace cimd {

void ModelConfig::validate() const {
    if (T < 1) throw std::invalid_argument("ModelConfig: T must be >= 1");
    denoiser.validate();
    if (use_ambiguity) {
        ambiguity.validate();
        if (ambiguity.prior_channels != denoiser.prior_channels) {
            throw std::invalid_argument("ModelConfig: prior channel count differs between denoiser and ambiguity nets");
        }
    }
}

Model::Model(ModelConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      schedule_(make_linear_schedule(cfg_.T, cfg_.schedule)),
      denoiser_(cfg_.denoiser) {
    if (cfg_.use_ambiguity) {
        amn_.emplace(AmbiguityNet::Kind::Modeling, cfg_.ambiguity);
        acn_.emplace(AmbiguityNet::Kind::Controlling, cfg_.ambiguity);
    }
}

const AmbiguityNet& Model::amn() const {
    if (!amn_) throw std::logic_error("model has no ambiguity networks");
    return *amn_;
}

const AmbiguityNet& Model::acn() const {
    if (!acn_) throw std::logic_error("model has no ambiguity networks");
    return *acn_;
}

ParamMap Model::init_params(std::uint64_t seed) const {
    ParamMap params;
    denoiser_.init_params(params, seed);
    if (amn_) {
        amn_->init_params(params, seed);
        acn_->init_params(params, seed);
    }
    return params;
}

}  // namespace cimd
