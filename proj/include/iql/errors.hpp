#pragma once

#include <stdexcept>
#include <string>

namespace iql {

/// Raised when a training loop produces a non-finite loss or weight.
/// Carries the step at which the run was aborted.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(long step, const std::string& what)
        : std::runtime_error("divergence at step " + std::to_string(step) + ": " + what),
          step_(step) {}

    long step() const { return step_; }

private:
    long step_;
};

}  // namespace iql
