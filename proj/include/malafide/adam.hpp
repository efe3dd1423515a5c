#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "malafide/error.hpp"

namespace malafide {

struct AdamParams {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// Raw (biased) first and second moments plus the step counter.
struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;

    explicit AdamState(std::size_t size = 0) : first_moment(size, 0.0), second_moment(size, 0.0) {}
};

/// One Adam descent step with bias correction. Weight decay enters as an L2
/// term added to the gradient (coupled decay, not AdamW).
inline void adam_step(std::span<double> params, std::span<const double> gradient, AdamState& state,
                      const AdamParams& config) {
    detail::require(gradient.size() == params.size() && state.first_moment.size() == params.size() &&
                        state.second_moment.size() == params.size(),
                    "adam_step: parameter, gradient and state sizes differ");
    for (std::size_t i = 0; i < gradient.size(); ++i)
        if (!std::isfinite(gradient[i]))
            throw NumericalError("adam_step: gradient entry " + std::to_string(i) + " is not finite");

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = gradient[i] + config.weight_decay * params[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g * g;
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

} // namespace malafide
