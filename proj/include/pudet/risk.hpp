#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pudet/errors.hpp"

namespace pudet {

enum class LossKind { CrossEntropy };

// Binary cross-entropy with probability clipping. Scores are clipped to
// [eps, 1-eps] before taking logs, so the loss is finite for any score in
// [0, 1] including the saturated endpoints.
struct LossFunction {
    LossKind kind = LossKind::CrossEntropy;
    double clip_epsilon = 1e-7;  // must lie in (0, 1e-3]
};

namespace detail {

inline void check_loss_function(const LossFunction& lf) {
    if (!(lf.clip_epsilon > 0.0) || lf.clip_epsilon > 1e-3)
        throw InvalidInputError("clip_epsilon must lie in (0, 1e-3], got " +
                                std::to_string(lf.clip_epsilon));
}

inline void check_label(int label) {
    if (label != 1 && label != -1)
        throw InvalidInputError("label must be +1 or -1, got " + std::to_string(label));
}

}  // namespace detail

inline double clip_score(double t, const LossFunction& lf) {
    return std::min(std::max(t, lf.clip_epsilon), 1.0 - lf.clip_epsilon);
}

// H(clip(t), y): -ln(t) for y=+1, -ln(1-t) for y=-1
inline double loss_value(double t, int label, const LossFunction& lf) {
    detail::check_loss_function(lf);
    detail::check_label(label);
    if (!std::isfinite(t)) throw InvalidInputError("non-finite score passed to loss");
    const double c = clip_score(t, lf);
    return label > 0 ? -std::log(c) : -std::log1p(-c);
}

// dH/dt: -1/t for y=+1, 1/(1-t) for y=-1 on the interior of the clip
// interval; 0 where the clip saturates (the clipped value is constant there).
inline double loss_derivative(double t, int label, const LossFunction& lf) {
    detail::check_loss_function(lf);
    detail::check_label(label);
    if (!std::isfinite(t)) throw InvalidInputError("non-finite score passed to loss derivative");
    if (t <= lf.clip_epsilon || t >= 1.0 - lf.clip_epsilon) return 0.0;
    return label > 0 ? -1.0 / t : 1.0 / (1.0 - t);
}

// Whether the second score list holds known negatives (PN view) or an
// unlabeled positive/negative mixture (PU view).
enum class BatchInterpretation { Negative, Unlabeled };

struct RiskBatch {
    std::vector<double> positive_scores;  // labeled-positive objectness scores
    std::vector<double> other_scores;     // negative or unlabeled scores
    BatchInterpretation interpretation = BatchInterpretation::Unlabeled;
};

// Empirical mean losses making up a risk value. r_other_minus is the
// negative-label mean over the second list (negatives under PN, unlabeled
// under PU). clamp_active records whether the non-negative estimator zeroed
// its correction term.
struct RiskBreakdown {
    double r_p_plus = 0.0;
    double r_p_minus = 0.0;
    double r_other_minus = 0.0;
    bool clamp_active = false;
    double total = 0.0;
};

struct ClassPriors {
    double positive = 0.5;
    double negative = 0.5;
};

namespace detail {

inline void check_batch(const RiskBatch& batch) {
    if (batch.positive_scores.empty() && batch.other_scores.empty())
        throw InvalidInputError("risk batch has no samples on either side");
    for (double s : batch.positive_scores)
        if (!std::isfinite(s)) throw InvalidInputError("non-finite positive score in batch");
    for (double s : batch.other_scores)
        if (!std::isfinite(s)) throw InvalidInputError("non-finite other score in batch");
}

// Mean loss over a score list. Losses are sorted before summation so the
// result is exactly invariant under permutations of the list. Empty lists
// contribute a zero mean (their prior-weighted term vanishes).
inline double mean_loss(const std::vector<double>& scores, int label, const LossFunction& lf) {
    if (scores.empty()) return 0.0;
    std::vector<double> losses;
    losses.reserve(scores.size());
    for (double s : scores) losses.push_back(loss_value(s, label, lf));
    std::sort(losses.begin(), losses.end());
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(losses.size());
}

inline void check_prior(double pi_p) {
    if (!(pi_p >= 0.0 && pi_p <= 1.0))
        throw InvalidInputError("class prior must lie in [0, 1], got " + std::to_string(pi_p));
}

}  // namespace detail

// Counted priors N_p/(N_p+N_n), N_n/(N_p+N_n) from the batch sizes.
inline ClassPriors counted_priors(const RiskBatch& batch) {
    detail::check_batch(batch);
    const double np = static_cast<double>(batch.positive_scores.size());
    const double nn = static_cast<double>(batch.other_scores.size());
    return {np / (np + nn), nn / (np + nn)};
}

// Positive-negative empirical risk:
//   pi_p * mean_p H(c,+1) + pi_n * mean_n H(c,-1).
// Priors default to the counted estimates from the batch sizes; explicit
// priors must sum to 1 within 1e-9.
inline RiskBreakdown pn_risk(const RiskBatch& batch, std::optional<ClassPriors> priors,
                             const LossFunction& lf) {
    detail::check_loss_function(lf);
    detail::check_batch(batch);
    const ClassPriors pr = priors ? *priors : counted_priors(batch);
    if (std::abs(pr.positive + pr.negative - 1.0) > 1e-9)
        throw InvalidInputError("PN priors must sum to 1");
    detail::check_prior(pr.positive);
    RiskBreakdown out;
    out.r_p_plus = detail::mean_loss(batch.positive_scores, +1, lf);
    out.r_p_minus = detail::mean_loss(batch.positive_scores, -1, lf);
    out.r_other_minus = detail::mean_loss(batch.other_scores, -1, lf);
    out.clamp_active = false;
    out.total = pr.positive * out.r_p_plus + pr.negative * out.r_other_minus;
    return out;
}

// Positive-unlabeled empirical risk without the non-negativity correction:
//   pi_p * mean_p H(c,+1) + mean_u H(c,-1) - pi_p * mean_p H(c,-1).
// May be negative when the model overfits the positives.
inline RiskBreakdown pu_risk_unclamped(const RiskBatch& batch, double pi_p,
                                       const LossFunction& lf) {
    detail::check_loss_function(lf);
    detail::check_batch(batch);
    detail::check_prior(pi_p);
    RiskBreakdown out;
    out.r_p_plus = detail::mean_loss(batch.positive_scores, +1, lf);
    out.r_p_minus = detail::mean_loss(batch.positive_scores, -1, lf);
    out.r_other_minus = detail::mean_loss(batch.other_scores, -1, lf);
    out.clamp_active = false;
    out.total = pi_p * out.r_p_plus + out.r_other_minus - pi_p * out.r_p_minus;
    return out;
}

// Non-negative positive-unlabeled risk:
//   pi_p * mean_p H(c,+1) + max{0, mean_u H(c,-1) - pi_p * mean_p H(c,-1)}.
// clamp_active is true iff the correction term was negative and zeroed.
inline RiskBreakdown nn_pu_risk(const RiskBatch& batch, double pi_p, const LossFunction& lf) {
    RiskBreakdown out = pu_risk_unclamped(batch, pi_p, lf);
    const double correction = out.r_other_minus - pi_p * out.r_p_minus;
    out.clamp_active = correction < 0.0;
    out.total = pi_p * out.r_p_plus + std::max(0.0, correction);
    return out;
}

enum class RiskMode { Pn, PuUnclamped, NnPu };

// Gradient treatment of the clamped branch of the non-negative estimator.
// HardZero uses the subgradient 0 of max{0, .}; Defensive instead steps to
// shrink the negative correction term, i.e. follows the gradient of
// pi_p * r_p_plus - (r_u_minus - pi_p * r_p_minus).
enum class ClampPolicy { HardZero, Defensive };

struct ScoreGradients {
    std::vector<double> positive;
    std::vector<double> other;
};

// d(total)/d(score) for every score in the batch. Pn mode differentiates the
// counted-prior PN risk (the pi_p argument is unused there); the PU modes use
// pi_p as given. Scores at or beyond the clip boundary get gradient 0.
inline ScoreGradients risk_score_gradients(const RiskBatch& batch, double pi_p,
                                           const LossFunction& lf, RiskMode mode,
                                           ClampPolicy clamp_policy = ClampPolicy::HardZero) {
    detail::check_loss_function(lf);
    detail::check_batch(batch);
    const double np = static_cast<double>(batch.positive_scores.size());
    const double nu = static_cast<double>(batch.other_scores.size());
    ScoreGradients g;
    g.positive.resize(batch.positive_scores.size(), 0.0);
    g.other.resize(batch.other_scores.size(), 0.0);

    switch (mode) {
        case RiskMode::Pn: {
            const ClassPriors pr = counted_priors(batch);
            for (std::size_t i = 0; i < g.positive.size(); ++i)
                g.positive[i] =
                    pr.positive / np * loss_derivative(batch.positive_scores[i], +1, lf);
            for (std::size_t i = 0; i < g.other.size(); ++i)
                g.other[i] = pr.negative / nu * loss_derivative(batch.other_scores[i], -1, lf);
            return g;
        }
        case RiskMode::PuUnclamped:
        case RiskMode::NnPu: {
            detail::check_prior(pi_p);
            bool clamped = false;
            if (mode == RiskMode::NnPu) clamped = nn_pu_risk(batch, pi_p, lf).clamp_active;

            if (!clamped) {
                // pi_p * r_p_plus + r_u_minus - pi_p * r_p_minus
                for (std::size_t i = 0; i < g.positive.size(); ++i) {
                    const double t = batch.positive_scores[i];
                    g.positive[i] = pi_p / np *
                                    (loss_derivative(t, +1, lf) - loss_derivative(t, -1, lf));
                }
                for (std::size_t i = 0; i < g.other.size(); ++i)
                    g.other[i] = 1.0 / nu * loss_derivative(batch.other_scores[i], -1, lf);
            } else if (clamp_policy == ClampPolicy::HardZero) {
                // only pi_p * r_p_plus survives the clamp
                for (std::size_t i = 0; i < g.positive.size(); ++i)
                    g.positive[i] =
                        pi_p / np * loss_derivative(batch.positive_scores[i], +1, lf);
            } else {
                // pi_p * r_p_plus - (r_u_minus - pi_p * r_p_minus)
                for (std::size_t i = 0; i < g.positive.size(); ++i) {
                    const double t = batch.positive_scores[i];
                    g.positive[i] = pi_p / np *
                                    (loss_derivative(t, +1, lf) + loss_derivative(t, -1, lf));
                }
                for (std::size_t i = 0; i < g.other.size(); ++i)
                    g.other[i] = -1.0 / nu * loss_derivative(batch.other_scores[i], -1, lf);
            }
            return g;
        }
    }
    throw InvalidInputError("unknown risk mode");
}

}  // namespace pudet
