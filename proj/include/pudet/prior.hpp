#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "pudet/errors.hpp"

namespace pudet {

enum class PriorMode { Estimated, Fixed };

// Running estimate of the positive-class prior. In Estimated mode the value
// follows an exponential moving average of the fraction of proposals the
// classifier currently scores as confidently positive; in Fixed mode it is a
// hand-tuned constant that updates never touch.
struct PriorEstimate {
    double value = 0.01;  // near-zero start: a fresh model proposes almost nothing
    double momentum = 0.9;
    double confidence_threshold = 0.5;
    PriorMode mode = PriorMode::Estimated;
    std::optional<double> fixed_value;
};

inline void check_prior_estimate(const PriorEstimate& state) {
    if (!(state.value >= 0.0 && state.value <= 1.0))
        throw InvalidInputError("prior value must lie in [0, 1]");
    if (!(state.momentum >= 0.0 && state.momentum < 1.0))
        throw InvalidInputError("prior momentum must lie in [0, 1)");
    if (!(state.confidence_threshold > 0.0 && state.confidence_threshold < 1.0))
        throw InvalidInputError("confidence threshold must lie in (0, 1)");
    if (state.fixed_value && !(*state.fixed_value >= 0.0 && *state.fixed_value <= 1.0))
        throw InvalidInputError("fixed prior must lie in [0, 1]");
}

// EMA update from one batch of proposal scores:
//   f = |{score >= threshold}| / N,  value' = momentum * value + (1-momentum) * f.
// An empty score list carries no information and returns the state unchanged
// (callers flag the skip in their logs). Fixed mode never changes.
inline PriorEstimate update_prior(const PriorEstimate& state,
                                  const std::vector<double>& proposal_scores) {
    check_prior_estimate(state);
    if (state.mode == PriorMode::Fixed || proposal_scores.empty()) return state;
    std::size_t confident = 0;
    for (double s : proposal_scores)
        if (s >= state.confidence_threshold) ++confident;
    const double fraction =
        static_cast<double>(confident) / static_cast<double>(proposal_scores.size());
    PriorEstimate next = state;
    next.value = state.momentum * state.value + (1.0 - state.momentum) * fraction;
    // convex combination of two values in [0,1]; clamp only guards rounding
    next.value = std::min(1.0, std::max(0.0, next.value));
    return next;
}

// The prior the loss should use: the fixed constant in Fixed mode, the
// running estimate otherwise.
inline double effective_prior(const PriorEstimate& state) {
    check_prior_estimate(state);
    if (state.mode == PriorMode::Fixed) {
        if (!state.fixed_value)
            throw ConfigError("prior mode is fixed but no fixed value is configured");
        return *state.fixed_value;
    }
    return state.value;
}

}  // namespace pudet
