#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pudet/errors.hpp"
#include "pudet/risk.hpp"
#include "pudet/rng.hpp"

namespace pudet {

enum class Architecture { Linear, MlpOneHidden };

inline const char* architecture_name(Architecture a) {
    return a == Architecture::Linear ? "linear" : "mlp-1-hidden";
}

// Binary objectness classifier: a sigmoid over either a linear map or a
// one-hidden-layer tanh network. Parameters live in one flat vector so
// gradient checking and SGD can treat them uniformly.
//
// Layouts:
//   linear:        [w (d), b]
//   mlp-1-hidden:  [W1 (h x d, row-major), b1 (h), w2 (h), b2]
class Classifier {
public:
    static Classifier linear(int input_dim) {
        if (input_dim <= 0) throw InvalidInputError("input_dim must be positive");
        Classifier m;
        m.arch_ = Architecture::Linear;
        m.input_dim_ = input_dim;
        m.hidden_dim_ = 0;
        m.params_.assign(static_cast<std::size_t>(input_dim) + 1, 0.0);
        return m;
    }

    static Classifier mlp(int input_dim, int hidden_dim) {
        if (input_dim <= 0) throw InvalidInputError("input_dim must be positive");
        if (hidden_dim <= 0) throw InvalidInputError("hidden_dim must be positive");
        Classifier m;
        m.arch_ = Architecture::MlpOneHidden;
        m.input_dim_ = input_dim;
        m.hidden_dim_ = hidden_dim;
        m.params_.assign(static_cast<std::size_t>(hidden_dim) * input_dim + hidden_dim +
                             hidden_dim + 1,
                         0.0);
        return m;
    }

    Architecture architecture() const { return arch_; }
    int input_dim() const { return input_dim_; }
    int hidden_dim() const { return hidden_dim_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    void init_uniform(Rng& rng, double half_range = 0.1) {
        for (double& p : params_) p = rng.uniform(-half_range, half_range);
    }

    // Objectness score in (0, 1). Deterministic: fixed evaluation order,
    // output clamped one step inside the interval so saturation never
    // rounds to exactly 0 or 1.
    double forward(std::span<const double> features) const {
        check_features(features);
        return stable_sigmoid(logit(features));
    }

    double logit(std::span<const double> features) const {
        check_features(features);
        const std::size_t d = static_cast<std::size_t>(input_dim_);
        if (arch_ == Architecture::Linear) {
            double z = params_[d];  // bias
            for (std::size_t i = 0; i < d; ++i) z += params_[i] * features[i];
            return z;
        }
        const std::size_t h = static_cast<std::size_t>(hidden_dim_);
        const double* w1 = params_.data();
        const double* b1 = w1 + h * d;
        const double* w2 = b1 + h;
        const double b2 = w2[h];
        double z = b2;
        for (std::size_t j = 0; j < h; ++j) {
            double pre = b1[j];
            const double* row = w1 + j * d;
            for (std::size_t i = 0; i < d; ++i) pre += row[i] * features[i];
            z += w2[j] * std::tanh(pre);
        }
        return z;
    }

    // Accumulated parameter gradients for a batch of (features, drisk/dscore)
    // pairs. The incoming gradients already carry the 1/N batch factors, so
    // contributions are summed, not averaged.
    std::vector<double> backward(const std::vector<std::vector<double>>& features,
                                 const std::vector<double>& score_gradients) const {
        if (features.size() != score_gradients.size())
            throw InvalidInputError("backward: feature/gradient count mismatch");
        std::vector<double> grad(params_.size(), 0.0);
        const std::size_t d = static_cast<std::size_t>(input_dim_);
        const std::size_t h = static_cast<std::size_t>(hidden_dim_);
        std::vector<double> hidden(h), pre_grad(h);
        for (std::size_t n = 0; n < features.size(); ++n) {
            const std::vector<double>& x = features[n];
            check_features(x);
            const double s = stable_sigmoid(logit(x));
            const double dz = score_gradients[n] * s * (1.0 - s);
            if (arch_ == Architecture::Linear) {
                for (std::size_t i = 0; i < d; ++i) grad[i] += dz * x[i];
                grad[d] += dz;
                continue;
            }
            const double* w1 = params_.data();
            const double* b1 = w1 + h * d;
            const double* w2 = b1 + h;
            for (std::size_t j = 0; j < h; ++j) {
                double pre = b1[j];
                const double* row = w1 + j * d;
                for (std::size_t i = 0; i < d; ++i) pre += row[i] * x[i];
                hidden[j] = std::tanh(pre);
                pre_grad[j] = dz * w2[j] * (1.0 - hidden[j] * hidden[j]);
            }
            double* g_w1 = grad.data();
            double* g_b1 = g_w1 + h * d;
            double* g_w2 = g_b1 + h;
            for (std::size_t j = 0; j < h; ++j) {
                double* g_row = g_w1 + j * d;
                for (std::size_t i = 0; i < d; ++i) g_row[i] += pre_grad[j] * x[i];
                g_b1[j] += pre_grad[j];
                g_w2[j] += dz * hidden[j];
            }
            grad[h * d + h + h] += dz;  // b2
        }
        return grad;
    }

private:
    static double stable_sigmoid(double z) {
        double s;
        if (z >= 0.0) {
            s = 1.0 / (1.0 + std::exp(-z));
        } else {
            const double e = std::exp(z);
            s = e / (1.0 + e);
        }
        if (s < 1e-15) s = 1e-15;
        if (s > 1.0 - 1e-15) s = 1.0 - 1e-15;
        return s;
    }

    void check_features(std::span<const double> features) const {
        if (static_cast<int>(features.size()) != input_dim_)
            throw InvalidInputError("feature vector length " + std::to_string(features.size()) +
                                    " does not match input_dim " + std::to_string(input_dim_));
        for (double v : features)
            if (!std::isfinite(v)) throw InvalidInputError("non-finite feature value");
    }

    Architecture arch_ = Architecture::Linear;
    int input_dim_ = 1;
    int hidden_dim_ = 0;
    std::vector<double> params_;
};

struct OptimizerState {
    double learning_rate = 0.05;
    long step_count = 0;
};

inline void sgd_step(Classifier& model, const std::vector<double>& gradients,
                     OptimizerState& opt) {
    if (!(opt.learning_rate > 0.0)) throw InvalidInputError("learning_rate must be positive");
    if (gradients.size() != model.params().size())
        throw InvalidInputError("gradient shape does not match parameters");
    for (double g : gradients)
        if (!std::isfinite(g))
            throw DivergenceError("non-finite gradient at step " +
                                  std::to_string(opt.step_count));
    for (std::size_t i = 0; i < gradients.size(); ++i)
        model.params()[i] -= opt.learning_rate * gradients[i];
    ++opt.step_count;
}

// A scored training batch split by role; the second side is read as negative
// (PN) or unlabeled (PU) by the risk mode.
struct FeatureBatch {
    std::vector<std::vector<double>> positive;
    std::vector<std::vector<double>> other;
};

inline RiskBatch score_batch(const Classifier& model, const FeatureBatch& batch,
                             BatchInterpretation interpretation) {
    RiskBatch rb;
    rb.interpretation = interpretation;
    rb.positive_scores.reserve(batch.positive.size());
    rb.other_scores.reserve(batch.other.size());
    for (const auto& x : batch.positive) rb.positive_scores.push_back(model.forward(x));
    for (const auto& x : batch.other) rb.other_scores.push_back(model.forward(x));
    return rb;
}

// End-to-end empirical risk of a feature batch under the given mode.
inline RiskBreakdown batch_risk(const Classifier& model, const FeatureBatch& batch,
                                RiskMode mode, double pi_p, const LossFunction& lf) {
    const BatchInterpretation interp = mode == RiskMode::Pn ? BatchInterpretation::Negative
                                                            : BatchInterpretation::Unlabeled;
    const RiskBatch rb = score_batch(model, batch, interp);
    switch (mode) {
        case RiskMode::Pn: return pn_risk(rb, std::nullopt, lf);
        case RiskMode::PuUnclamped: return pu_risk_unclamped(rb, pi_p, lf);
        case RiskMode::NnPu: return nn_pu_risk(rb, pi_p, lf);
    }
    throw InvalidInputError("unknown risk mode");
}

// Parameter gradients of the end-to-end risk (chain rule through the score
// gradients of the active objective).
inline std::vector<double> batch_risk_gradients(const Classifier& model,
                                                const FeatureBatch& batch, RiskMode mode,
                                                double pi_p, const LossFunction& lf,
                                                ClampPolicy clamp_policy) {
    const BatchInterpretation interp = mode == RiskMode::Pn ? BatchInterpretation::Negative
                                                            : BatchInterpretation::Unlabeled;
    const RiskBatch rb = score_batch(model, batch, interp);
    const ScoreGradients sg = risk_score_gradients(rb, pi_p, lf, mode, clamp_policy);
    std::vector<std::vector<double>> xs;
    std::vector<double> gs;
    xs.reserve(batch.positive.size() + batch.other.size());
    gs.reserve(xs.capacity());
    for (std::size_t i = 0; i < batch.positive.size(); ++i) {
        xs.push_back(batch.positive[i]);
        gs.push_back(sg.positive[i]);
    }
    for (std::size_t i = 0; i < batch.other.size(); ++i) {
        xs.push_back(batch.other[i]);
        gs.push_back(sg.other[i]);
    }
    return model.backward(xs, gs);
}

// Central-finite-difference check of the analytic parameter gradients.
// Returns the max over parameters of |analytic - numeric| / max(1, |analytic|,
// |numeric|). Step h must lie in [1e-8, 1e-4].
inline double grad_check(Classifier model, const FeatureBatch& batch, RiskMode mode,
                         double pi_p, const LossFunction& lf, ClampPolicy clamp_policy,
                         double h = 1e-6) {
    if (!(h >= 1e-8 && h <= 1e-4))
        throw InvalidInputError("finite-difference step must lie in [1e-8, 1e-4]");
    const std::vector<double> analytic =
        batch_risk_gradients(model, batch, mode, pi_p, lf, clamp_policy);
    // Under the hard-zero policy the clamped branch is locally constant, so the
    // numeric view must differentiate the same branch the analytic side uses.
    const bool clamped =
        mode == RiskMode::NnPu && batch_risk(model, batch, mode, pi_p, lf).clamp_active;
    auto objective = [&](Classifier& m) {
        const RiskBatch rb = score_batch(
            m, batch,
            mode == RiskMode::Pn ? BatchInterpretation::Negative : BatchInterpretation::Unlabeled);
        switch (mode) {
            case RiskMode::Pn: return pn_risk(rb, std::nullopt, lf).total;
            case RiskMode::PuUnclamped: return pu_risk_unclamped(rb, pi_p, lf).total;
            case RiskMode::NnPu: {
                const RiskBreakdown b = nn_pu_risk(rb, pi_p, lf);
                if (!clamped) return b.total;
                if (clamp_policy == ClampPolicy::HardZero) return pi_p * b.r_p_plus;
                return pi_p * b.r_p_plus - (b.r_other_minus - pi_p * b.r_p_minus);
            }
        }
        throw InvalidInputError("unknown risk mode");
    };
    double max_err = 0.0;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const double saved = model.params()[i];
        model.params()[i] = saved + h;
        const double up = objective(model);
        model.params()[i] = saved - h;
        const double down = objective(model);
        model.params()[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        if (err > max_err) max_err = err;
    }
    return max_err;
}

// --- snapshot format -------------------------------------------------------
//
//   pudet-model v1
//   architecture <linear|mlp-1-hidden>
//   input_dim <d>
//   hidden_dim <h>          (0 for linear)
//   params <count>
//   <one parameter per line, 17 significant digits>

inline void save_model(std::ostream& os, const Classifier& model) {
    char buf[64];
    os << "pudet-model v1\n";
    os << "architecture " << architecture_name(model.architecture()) << "\n";
    os << "input_dim " << model.input_dim() << "\n";
    os << "hidden_dim " << model.hidden_dim() << "\n";
    os << "params " << model.params().size() << "\n";
    for (double p : model.params()) {
        std::snprintf(buf, sizeof(buf), "%.17g", p);
        os << buf << "\n";
    }
}

inline Classifier load_model(std::istream& is) {
    std::string magic, version;
    if (!(is >> magic >> version) || magic != "pudet-model" || version != "v1")
        throw ConfigError("not a pudet-model v1 snapshot");
    std::string key, arch_name;
    int input_dim = 0, hidden_dim = 0;
    std::size_t count = 0;
    if (!(is >> key >> arch_name) || key != "architecture")
        throw ConfigError("snapshot: missing architecture");
    if (!(is >> key >> input_dim) || key != "input_dim")
        throw ConfigError("snapshot: missing input_dim");
    if (!(is >> key >> hidden_dim) || key != "hidden_dim")
        throw ConfigError("snapshot: missing hidden_dim");
    if (!(is >> key >> count) || key != "params")
        throw ConfigError("snapshot: missing params count");
    Classifier model = arch_name == "linear" ? Classifier::linear(input_dim)
                       : arch_name == "mlp-1-hidden"
                           ? Classifier::mlp(input_dim, hidden_dim)
                           : throw ConfigError("snapshot: unknown architecture " + arch_name);
    if (count != model.params().size())
        throw ConfigError("snapshot: parameter count does not match architecture");
    for (std::size_t i = 0; i < count; ++i)
        if (!(is >> model.params()[i])) throw ConfigError("snapshot: truncated parameter list");
    return model;
}

}  // namespace pudet
