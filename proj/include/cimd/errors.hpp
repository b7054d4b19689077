#pragma once

#include <stdexcept>
#include <string>

namespace cimd {

// Non-finite values detected while training or sampling. The message names the
// offending term or timestep.
class DiagnosticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A dispersion statistic needs at least two masks in a set.
class UndefinedDispersionError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace cimd
