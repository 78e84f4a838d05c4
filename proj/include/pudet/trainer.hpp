#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pudet/config.hpp"
#include "pudet/dataset_io.hpp"
#include "pudet/errors.hpp"
#include "pudet/metrics.hpp"
#include "pudet/model.hpp"
#include "pudet/prior.hpp"
#include "pudet/risk.hpp"
#include "pudet/rng.hpp"
#include "pudet/scene.hpp"

namespace pudet {

enum class Objective { Pn, Pu };

inline const char* objective_name(Objective o) { return o == Objective::Pn ? "pn" : "pu"; }

// Whether the prior estimate absorbs the step's scores before or after the
// loss for that step is computed.
enum class PriorUpdateTiming { BeforeLoss, AfterLoss };

struct TrainConfig {
    Objective objective = Objective::Pu;
    // prior estimation (pu objective only; pn never touches prior state)
    PriorMode prior_mode = PriorMode::Estimated;
    double prior_momentum = 0.9;
    double prior_initial = 0.01;
    double prior_confidence_threshold = 0.5;
    std::optional<double> fixed_prior;
    PriorUpdateTiming prior_update_timing = PriorUpdateTiming::BeforeLoss;
    ClampPolicy clamp_policy = ClampPolicy::HardZero;
    LossFunction loss;
    // optimization
    int epochs = 10;
    double learning_rate = 0.05;
    // batch sampling
    int batch_anchors = 64;             // proposals sampled per scene
    double max_positive_fraction = 0.5; // cap on the labeled-positive share
    std::uint64_t seed = 1;
    // model
    Architecture architecture = Architecture::Linear;
    int hidden_dim = 16;
    double init_half_range = 0.1;
    // detection rule for forgetting measurement
    double detect_iou = 0.5;
    double detect_confidence = 0.8;
};

inline void check_train_config(const TrainConfig& c) {
    if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (c.batch_anchors <= 0) throw ConfigError("batch_anchors must be positive");
    if (!(c.max_positive_fraction > 0.0 && c.max_positive_fraction <= 1.0))
        throw ConfigError("max_positive_fraction must lie in (0, 1]");
    if (!(c.prior_momentum >= 0.0 && c.prior_momentum < 1.0))
        throw ConfigError("prior momentum must lie in [0, 1)");
    if (!(c.prior_initial >= 0.0 && c.prior_initial <= 1.0))
        throw ConfigError("prior initial value must lie in [0, 1]");
    if (c.prior_mode == PriorMode::Fixed && !c.fixed_prior)
        throw ConfigError("prior mode is fixed but no fixed prior is configured");
    if (!(c.detect_iou > 0.0 && c.detect_iou <= 1.0) ||
        !(c.detect_confidence > 0.0 && c.detect_confidence < 1.0))
        throw ConfigError("detection thresholds are out of range");
    if (c.architecture == Architecture::MlpOneHidden && c.hidden_dim <= 0)
        throw ConfigError("hidden_dim must be positive for the mlp architecture");
}

struct StepRecord {
    long step = 0;
    int epoch = 0;
    std::int64_t scene_id = 0;
    double objective_value = 0.0;
    RiskBreakdown breakdown;
    double pi_hat = 0.0;  // prior used by the loss (counted prior under pn)
    std::size_t batch_positives = 0;
    std::size_t batch_others = 0;
};

struct EpochAggregate {
    int epoch = 0;
    double mean_objective = 0.0;
    double mean_pi_hat = 0.0;
    long clamp_active_steps = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochAggregate> epochs;
    long skipped_scenes = 0;
};

// One row per (object, epoch): was the object detected directly before its
// scene was trained on, and directly after the gradients were applied.
struct ForgettingEvent {
    int epoch = 0;
    std::int64_t scene_id = 0;
    std::size_t object_index = 0;
    bool labeled = false;
    bool detected_before = false;
    bool detected_after = false;
};

struct ForgettingTracker {
    std::vector<ForgettingEvent> events;
};

// Percentages per epoch and stratum; absent strata stay disengaged rather
// than reading as zero.
struct DetectionRatePoint {
    int epoch = 0;
    std::optional<double> labeled_before, labeled_after;
    std::optional<double> unlabeled_before, unlabeled_after;
};

struct SampledBatch {
    std::vector<std::size_t> positive_indices;
    std::vector<std::size_t> other_indices;

    bool empty() const { return positive_indices.empty() && other_indices.empty(); }
};

// Up to batch_anchors proposals: labeled-positives first, capped at
// floor(batch_anchors * max_positive_fraction), remainder filled from the
// other-role pool. Both sides are uniform samples without replacement.
inline SampledBatch sample_training_batch(const std::vector<Proposal>& proposals,
                                          const TrainConfig& config, Rng& rng) {
    check_train_config(config);
    SampledBatch batch;
    if (proposals.empty()) return batch;  // skip-scene signal
    std::vector<std::size_t> positives, others;
    for (std::size_t i = 0; i < proposals.size(); ++i)
        (proposals[i].role == ProposalRole::LabeledPositive ? positives : others).push_back(i);
    const std::size_t cap = static_cast<std::size_t>(
        static_cast<double>(config.batch_anchors) * config.max_positive_fraction + 1e-9);
    const std::size_t n_pos = std::min(positives.size(), cap);
    rng.partial_shuffle(positives, n_pos);
    positives.resize(n_pos);
    const std::size_t n_other =
        std::min(others.size(), static_cast<std::size_t>(config.batch_anchors) - n_pos);
    rng.partial_shuffle(others, n_other);
    others.resize(n_other);
    batch.positive_indices = std::move(positives);
    batch.other_indices = std::move(others);
    return batch;
}

namespace detail {

inline FeatureBatch gather_features(const std::vector<Proposal>& proposals,
                                    const SampledBatch& batch) {
    FeatureBatch fb;
    fb.positive.reserve(batch.positive_indices.size());
    fb.other.reserve(batch.other_indices.size());
    for (std::size_t i : batch.positive_indices) fb.positive.push_back(proposals[i].features);
    for (std::size_t i : batch.other_indices) fb.other.push_back(proposals[i].features);
    return fb;
}

}  // namespace detail

// One optimization step on one scene. Order: forward the sampled batch,
// update the prior from those scores (pu objective, estimated mode, default
// timing), compute the objective, backpropagate, apply SGD.
inline StepRecord train_step(Classifier& model, const Scene& scene,
                             const std::vector<Proposal>& proposals, PriorEstimate& prior,
                             OptimizerState& opt, const TrainConfig& config, Rng& rng) {
    const SampledBatch sampled = sample_training_batch(proposals, config, rng);
    if (sampled.empty())
        throw InvalidInputError("train_step on a scene with no proposals (callers must skip)");
    const FeatureBatch features = detail::gather_features(proposals, sampled);
    const BatchInterpretation interp = config.objective == Objective::Pn
                                           ? BatchInterpretation::Negative
                                           : BatchInterpretation::Unlabeled;
    RiskBatch scored = score_batch(model, features, interp);

    double pi_hat = 0.0;
    RiskBreakdown breakdown;
    if (config.objective == Objective::Pn) {
        breakdown = pn_risk(scored, std::nullopt, config.loss);
        pi_hat = counted_priors(scored).positive;
    } else {
        std::vector<double> all_scores = scored.positive_scores;
        all_scores.insert(all_scores.end(), scored.other_scores.begin(),
                          scored.other_scores.end());
        if (config.prior_update_timing == PriorUpdateTiming::BeforeLoss)
            prior = update_prior(prior, all_scores);
        pi_hat = effective_prior(prior);
        breakdown = nn_pu_risk(scored, pi_hat, config.loss);
        if (config.prior_update_timing == PriorUpdateTiming::AfterLoss)
            prior = update_prior(prior, all_scores);
    }
    if (!std::isfinite(breakdown.total))
        throw DivergenceError("non-finite objective on scene " + std::to_string(scene.id) +
                              " at step " + std::to_string(opt.step_count));

    const RiskMode mode = config.objective == Objective::Pn ? RiskMode::Pn : RiskMode::NnPu;
    const ScoreGradients sg =
        risk_score_gradients(scored, pi_hat, config.loss, mode, config.clamp_policy);
    std::vector<std::vector<double>> xs;
    std::vector<double> gs;
    xs.reserve(features.positive.size() + features.other.size());
    for (std::size_t i = 0; i < features.positive.size(); ++i) {
        xs.push_back(features.positive[i]);
        gs.push_back(sg.positive[i]);
    }
    for (std::size_t i = 0; i < features.other.size(); ++i) {
        xs.push_back(features.other[i]);
        gs.push_back(sg.other[i]);
    }
    sgd_step(model, model.backward(xs, gs), opt);

    StepRecord record;
    record.step = opt.step_count;
    record.scene_id = scene.id;
    record.objective_value = breakdown.total;
    record.breakdown = breakdown;
    record.pi_hat = pi_hat;
    record.batch_positives = sampled.positive_indices.size();
    record.batch_others = sampled.other_indices.size();
    return record;
}

// Detection rule for forgetting measurement: some proposal overlaps the
// object at IoU >= detect_iou and scores at least detect_confidence. Scans
// all proposals of the scene, not the sampled batch.
inline bool is_detected(const Classifier& model, const ObjectInstance& object,
                        const std::vector<Proposal>& proposals, double detect_iou = 0.5,
                        double detect_confidence = 0.8) {
    for (const Proposal& p : proposals) {
        if (iou(p.box, object.box) < detect_iou) continue;
        if (model.forward(p.features) >= detect_confidence) return true;
    }
    return false;
}

namespace detail {

// Per-scene cache: which proposals overlap which objects (geometry never
// changes during a run), so an evaluation pass costs one forward per
// proposal.
struct SceneEvalCache {
    std::vector<std::vector<std::size_t>> overlapping;  // object -> proposal indices
};

inline SceneEvalCache build_eval_cache(const Scene& scene,
                                       const std::vector<Proposal>& proposals,
                                       double detect_iou) {
    SceneEvalCache cache;
    cache.overlapping.resize(scene.objects.size());
    for (std::size_t o = 0; o < scene.objects.size(); ++o)
        for (std::size_t p = 0; p < proposals.size(); ++p)
            if (iou(proposals[p].box, scene.objects[o].box) >= detect_iou)
                cache.overlapping[o].push_back(p);
    return cache;
}

inline std::vector<bool> detected_objects(const Classifier& model,
                                          const std::vector<Proposal>& proposals,
                                          const SceneEvalCache& cache,
                                          double detect_confidence) {
    std::vector<double> scores(proposals.size());
    for (std::size_t p = 0; p < proposals.size(); ++p)
        scores[p] = model.forward(proposals[p].features);
    std::vector<bool> detected(cache.overlapping.size(), false);
    for (std::size_t o = 0; o < cache.overlapping.size(); ++o)
        for (std::size_t p : cache.overlapping[o])
            if (scores[p] >= detect_confidence) {
                detected[o] = true;
                break;
            }
    return detected;
}

}  // namespace detail

struct TrainResult {
    Classifier model = Classifier::linear(1);
    TrainLog log;
    ForgettingTracker tracker;
    PriorEstimate final_prior;
};

// Full training run: epochs passes over the scenes in seeded shuffled order,
// one scene per step. Each step also records, for every ground-truth object
// of the scene, whether it was detected directly before and directly after
// the update.
inline TrainResult run_training(const Dataset& dataset, const TrainConfig& config) {
    check_train_config(config);
    if (dataset.scenes.empty()) throw InvalidInputError("training dataset has no scenes");

    TrainResult result;
    Rng init_rng(mix_seed(config.seed, 0xF17ULL));
    if (config.architecture == Architecture::Linear)
        result.model = Classifier::linear(dataset.world.feature_dim);
    else
        result.model = Classifier::mlp(dataset.world.feature_dim, config.hidden_dim);
    result.model.init_uniform(init_rng, config.init_half_range);

    PriorEstimate prior;
    prior.value = config.prior_initial;
    prior.momentum = config.prior_momentum;
    prior.confidence_threshold = config.prior_confidence_threshold;
    prior.mode = config.prior_mode;
    prior.fixed_value = config.fixed_prior;
    check_prior_estimate(prior);

    // featurize every scene once; features are a function of (world seed, id)
    std::vector<std::vector<Proposal>> proposals;
    std::vector<detail::SceneEvalCache> caches;
    proposals.reserve(dataset.scenes.size());
    caches.reserve(dataset.scenes.size());
    for (const Scene& scene : dataset.scenes) {
        proposals.push_back(scene_proposals(scene, dataset.world));
        caches.push_back(detail::build_eval_cache(scene, proposals.back(), config.detect_iou));
    }

    OptimizerState opt{config.learning_rate, 0};
    Rng shuffle_rng(mix_seed(config.seed, 0x5F0ULL));
    Rng batch_rng(mix_seed(config.seed, 0xBA7ULL));
    std::vector<std::size_t> order(dataset.scenes.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double objective_sum = 0.0, pi_sum = 0.0;
        long clamp_steps = 0, epoch_steps = 0;
        for (std::size_t idx : order) {
            const Scene& scene = dataset.scenes[idx];
            if (proposals[idx].empty()) {
                ++result.log.skipped_scenes;
                continue;
            }
            const std::vector<bool> before = detail::detected_objects(
                result.model, proposals[idx], caches[idx], config.detect_confidence);
            StepRecord record = train_step(result.model, scene, proposals[idx], prior, opt,
                                           config, batch_rng);
            record.epoch = epoch;
            const std::vector<bool> after = detail::detected_objects(
                result.model, proposals[idx], caches[idx], config.detect_confidence);
            for (std::size_t o = 0; o < scene.objects.size(); ++o)
                result.tracker.events.push_back({epoch, scene.id, o, scene.objects[o].labeled,
                                                 before[o], after[o]});
            objective_sum += record.objective_value;
            pi_sum += record.pi_hat;
            clamp_steps += record.breakdown.clamp_active ? 1 : 0;
            ++epoch_steps;
            result.log.steps.push_back(std::move(record));
        }
        if (epoch_steps > 0)
            result.log.epochs.push_back({epoch, objective_sum / epoch_steps,
                                         pi_sum / epoch_steps, clamp_steps});
    }
    result.final_prior = prior;
    return result;
}

// Four detection-rate series per epoch, as percentages.
inline std::vector<DetectionRatePoint> detection_rate_curves(const ForgettingTracker& tracker) {
    std::vector<DetectionRatePoint> out;
    std::map<int, std::array<long, 6>> acc;  // epoch -> {nL, bL, aL, nU, bU, aU}
    for (const ForgettingEvent& e : tracker.events) {
        auto& a = acc[e.epoch];
        const int base = e.labeled ? 0 : 3;
        a[base] += 1;
        a[base + 1] += e.detected_before ? 1 : 0;
        a[base + 2] += e.detected_after ? 1 : 0;
    }
    for (const auto& [epoch, a] : acc) {
        DetectionRatePoint p;
        p.epoch = epoch;
        if (a[0] > 0) {
            p.labeled_before = 100.0 * static_cast<double>(a[1]) / static_cast<double>(a[0]);
            p.labeled_after = 100.0 * static_cast<double>(a[2]) / static_cast<double>(a[0]);
        }
        if (a[3] > 0) {
            p.unlabeled_before = 100.0 * static_cast<double>(a[4]) / static_cast<double>(a[3]);
            p.unlabeled_after = 100.0 * static_cast<double>(a[5]) / static_cast<double>(a[3]);
        }
        out.push_back(p);
    }
    return out;
}

// Proposals the classifier marks positive (score >= min_score) become the
// detection set for the evaluation metrics, the way an RPN emits only the
// proposals it scores as objects. A zero-weight model scores 0.5 everywhere,
// so with the default cutoff every anchor is emitted and ranked purely by the
// deterministic tie-break: the random-detector baseline.
inline std::vector<Detection> score_scene_detections(const Classifier& model,
                                                     const std::vector<Scene>& scenes,
                                                     const WorldConfig& world,
                                                     double min_score = 0.5) {
    std::vector<Detection> out;
    for (const Scene& scene : scenes) {
        const std::vector<Proposal> proposals = scene_proposals(scene, world);
        for (const Proposal& p : proposals) {
            const double score = model.forward(p.features);
            if (score >= min_score) out.push_back({scene.id, p.box, score});
        }
    }
    return out;
}

// --- tabular export --------------------------------------------------------

inline void write_train_log(std::ostream& os, const TrainLog& log) {
    os << "step,epoch,objective,r_p_plus,r_p_minus,r_other_minus,clamp_active,pi_hat\n";
    for (const StepRecord& r : log.steps)
        os << r.step << "," << r.epoch << "," << format_real(r.objective_value) << ","
           << format_real(r.breakdown.r_p_plus) << "," << format_real(r.breakdown.r_p_minus)
           << "," << format_real(r.breakdown.r_other_minus) << ","
           << (r.breakdown.clamp_active ? 1 : 0) << "," << format_real(r.pi_hat) << "\n";
}

// Long-format rates; rows for absent strata are omitted entirely.
inline void write_detection_rates(std::ostream& os,
                                  const std::vector<DetectionRatePoint>& points) {
    os << "epoch,stratum,phase,rate\n";
    auto row = [&os](int epoch, const char* stratum, const char* phase,
                     const std::optional<double>& rate) {
        if (rate) os << epoch << "," << stratum << "," << phase << "," << format_real(*rate)
                     << "\n";
    };
    for (const DetectionRatePoint& p : points) {
        row(p.epoch, "labeled", "before", p.labeled_before);
        row(p.epoch, "labeled", "after", p.labeled_after);
        row(p.epoch, "unlabeled", "before", p.unlabeled_before);
        row(p.epoch, "unlabeled", "after", p.unlabeled_after);
    }
}

// --- config (de)serialization ----------------------------------------------

inline Objective objective_from(const std::string& s) {
    if (s == "pn") return Objective::Pn;
    if (s == "pu") return Objective::Pu;
    throw ConfigError("unknown objective: " + s);
}

inline const char* prior_mode_name(PriorMode m) {
    return m == PriorMode::Estimated ? "estimated" : "fixed";
}
inline PriorMode prior_mode_from(const std::string& s) {
    if (s == "estimated") return PriorMode::Estimated;
    if (s == "fixed") return PriorMode::Fixed;
    throw ConfigError("unknown prior mode: " + s);
}

inline const char* prior_timing_name(PriorUpdateTiming t) {
    return t == PriorUpdateTiming::BeforeLoss ? "before" : "after";
}
inline PriorUpdateTiming prior_timing_from(const std::string& s) {
    if (s == "before") return PriorUpdateTiming::BeforeLoss;
    if (s == "after") return PriorUpdateTiming::AfterLoss;
    throw ConfigError("unknown prior update timing: " + s);
}

inline const char* clamp_policy_name(ClampPolicy p) {
    return p == ClampPolicy::HardZero ? "hard-zero" : "defensive";
}
inline ClampPolicy clamp_policy_from(const std::string& s) {
    if (s == "hard-zero") return ClampPolicy::HardZero;
    if (s == "defensive") return ClampPolicy::Defensive;
    throw ConfigError("unknown clamp policy: " + s);
}

inline Architecture architecture_from(const std::string& s) {
    if (s == "linear") return Architecture::Linear;
    if (s == "mlp-1-hidden") return Architecture::MlpOneHidden;
    throw ConfigError("unknown architecture: " + s);
}

inline void train_to_keyvalues(const TrainConfig& c, KeyValues& kv) {
    kv.set("train.objective", objective_name(c.objective));
    kv.set("train.prior_mode", prior_mode_name(c.prior_mode));
    kv.set_real("train.prior_momentum", c.prior_momentum);
    kv.set_real("train.prior_initial", c.prior_initial);
    kv.set_real("train.prior_confidence_threshold", c.prior_confidence_threshold);
    if (c.fixed_prior) kv.set_real("train.fixed_prior", *c.fixed_prior);
    kv.set("train.prior_update_timing", prior_timing_name(c.prior_update_timing));
    kv.set("train.clamp_policy", clamp_policy_name(c.clamp_policy));
    kv.set_real("train.clip_epsilon", c.loss.clip_epsilon);
    kv.set_int("train.epochs", c.epochs);
    kv.set_real("train.learning_rate", c.learning_rate);
    kv.set_int("train.batch_anchors", c.batch_anchors);
    kv.set_real("train.max_positive_fraction", c.max_positive_fraction);
    kv.set_u64("train.seed", c.seed);
    kv.set("train.architecture", architecture_name(c.architecture));
    kv.set_int("train.hidden_dim", c.hidden_dim);
    kv.set_real("train.init_half_range", c.init_half_range);
    kv.set_real("train.detect_iou", c.detect_iou);
    kv.set_real("train.detect_confidence", c.detect_confidence);
}

inline TrainConfig train_from_keyvalues(const KeyValues& kv) {
    TrainConfig c;
    c.objective = objective_from(kv.get_string("train.objective", objective_name(c.objective)));
    c.prior_mode =
        prior_mode_from(kv.get_string("train.prior_mode", prior_mode_name(c.prior_mode)));
    c.prior_momentum = kv.get_real("train.prior_momentum", c.prior_momentum);
    c.prior_initial = kv.get_real("train.prior_initial", c.prior_initial);
    c.prior_confidence_threshold =
        kv.get_real("train.prior_confidence_threshold", c.prior_confidence_threshold);
    if (kv.get("train.fixed_prior"))
        c.fixed_prior = kv.get_real("train.fixed_prior", 0.0);
    c.prior_update_timing = prior_timing_from(
        kv.get_string("train.prior_update_timing", prior_timing_name(c.prior_update_timing)));
    c.clamp_policy =
        clamp_policy_from(kv.get_string("train.clamp_policy", clamp_policy_name(c.clamp_policy)));
    c.loss.clip_epsilon = kv.get_real("train.clip_epsilon", c.loss.clip_epsilon);
    c.epochs = static_cast<int>(kv.get_int("train.epochs", c.epochs));
    c.learning_rate = kv.get_real("train.learning_rate", c.learning_rate);
    c.batch_anchors = static_cast<int>(kv.get_int("train.batch_anchors", c.batch_anchors));
    c.max_positive_fraction = kv.get_real("train.max_positive_fraction", c.max_positive_fraction);
    c.seed = kv.get_u64("train.seed", c.seed);
    c.architecture =
        architecture_from(kv.get_string("train.architecture", architecture_name(c.architecture)));
    c.hidden_dim = static_cast<int>(kv.get_int("train.hidden_dim", c.hidden_dim));
    c.init_half_range = kv.get_real("train.init_half_range", c.init_half_range);
    c.detect_iou = kv.get_real("train.detect_iou", c.detect_iou);
    c.detect_confidence = kv.get_real("train.detect_confidence", c.detect_confidence);
    check_train_config(c);
    return c;
}

}  // namespace pudet
