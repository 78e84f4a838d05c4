// Trainer: batch sampling caps, prior bookkeeping per objective, run-level
// determinism, forgetting curves, and the log export formats.
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <vector>

#include "pudet/pudet.hpp"

using namespace pudet;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<Proposal> synthetic_proposals(std::size_t n_pos, std::size_t n_other) {
    std::vector<Proposal> out;
    for (std::size_t i = 0; i < n_pos + n_other; ++i) {
        Proposal p;
        p.box = {0.0, 0.0, 1.0 + static_cast<double>(i), 1.0};
        p.features = {static_cast<double>(i)};
        p.role = i < n_pos ? ProposalRole::LabeledPositive : ProposalRole::Other;
        out.push_back(std::move(p));
    }
    return out;
}

Dataset small_dataset(std::uint64_t seed, int scenes, double rho) {
    Dataset ds;
    ds.world.seed = seed;
    ds.scenes = generate_scenes(ds.world, scenes);
    ds.missing.rho = rho;
    ds.missing.mode = MissingnessMode::PerAnnotation;
    if (rho > 0.0) {
        Rng rng(mix_seed(seed, kDiscardStreamSalt));
        discard_labels(ds.scenes, ds.missing, rng);
    }
    return ds;
}

}  // namespace

TEST_CASE("sample_training_batch caps labeled positives at half the batch", "[trainer]") {
    const std::vector<Proposal> proposals = synthetic_proposals(40, 80);
    TrainConfig config;  // batch 64, max positive fraction 0.5
    Rng rng(3);
    const SampledBatch batch = sample_training_batch(proposals, config, rng);
    CHECK(batch.positive_indices.size() == 32);
    CHECK(batch.other_indices.size() == 32);

    std::set<std::size_t> seen;
    for (std::size_t i : batch.positive_indices) {
        REQUIRE(proposals[i].role == ProposalRole::LabeledPositive);
        REQUIRE(seen.insert(i).second);
    }
    for (std::size_t i : batch.other_indices) {
        REQUIRE(proposals[i].role == ProposalRole::Other);
        REQUIRE(seen.insert(i).second);
    }
}

TEST_CASE("sample_training_batch fills from others when positives are scarce", "[trainer]") {
    TrainConfig config;
    SECTION("no positives at all") {
        Rng rng(3);
        const SampledBatch batch =
            sample_training_batch(synthetic_proposals(0, 100), config, rng);
        CHECK(batch.positive_indices.empty());
        CHECK(batch.other_indices.size() == 64);
    }
    SECTION("few positives leave budget for others") {
        Rng rng(3);
        const SampledBatch batch = sample_training_batch(synthetic_proposals(5, 100), config, rng);
        CHECK(batch.positive_indices.size() == 5);
        CHECK(batch.other_indices.size() == 59);
    }
    SECTION("small pools are taken whole") {
        Rng rng(3);
        const SampledBatch batch = sample_training_batch(synthetic_proposals(2, 3), config, rng);
        CHECK(batch.positive_indices.size() == 2);
        CHECK(batch.other_indices.size() == 3);
    }
    SECTION("empty proposal list is the skip signal") {
        Rng rng(3);
        CHECK(sample_training_batch({}, config, rng).empty());
    }
}

TEST_CASE("train_step rejects scenes with no proposals", "[trainer]") {
    Classifier model = Classifier::linear(1);
    PriorEstimate prior;
    OptimizerState opt{0.05, 0};
    TrainConfig config;
    Rng rng(1);
    Scene scene;
    CHECK_THROWS_AS(train_step(model, scene, {}, prior, opt, config, rng), InvalidInputError);
}

TEST_CASE("run_training is bitwise deterministic", "[trainer]") {
    const Dataset ds = small_dataset(11, 20, 0.3);
    TrainConfig config;
    config.epochs = 3;

    const TrainResult a = run_training(ds, config);
    const TrainResult b = run_training(ds, config);

    REQUIRE(a.model.params() == b.model.params());
    REQUIRE(a.log.steps.size() == b.log.steps.size());
    REQUIRE(a.log.steps.size() == 60);
    for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
        REQUIRE(a.log.steps[i].step == b.log.steps[i].step);
        REQUIRE(a.log.steps[i].scene_id == b.log.steps[i].scene_id);
        REQUIRE(a.log.steps[i].objective_value == b.log.steps[i].objective_value);
        REQUIRE(a.log.steps[i].pi_hat == b.log.steps[i].pi_hat);
    }
    REQUIRE(a.tracker.events.size() == b.tracker.events.size());
    CHECK(a.final_prior.value == b.final_prior.value);
    CHECK(a.log.skipped_scenes == 0);

    // Steps number 1..N and epochs are 1-based.
    for (std::size_t i = 0; i < a.log.steps.size(); ++i)
        REQUIRE(a.log.steps[i].step == static_cast<long>(i) + 1);
    CHECK(a.log.steps.front().epoch == 1);
    CHECK(a.log.steps.back().epoch == 3);
    REQUIRE(a.log.epochs.size() == 3);

    TrainConfig other = config;
    other.seed = 2;
    const TrainResult c = run_training(ds, other);
    CHECK(a.model.params() != c.model.params());
}

TEST_CASE("zero epochs leaves the freshly initialized model", "[trainer]") {
    const Dataset ds = small_dataset(11, 5, 0.0);
    TrainConfig config;
    config.epochs = 0;
    const TrainResult r = run_training(ds, config);
    CHECK(r.log.steps.empty());
    CHECK(r.log.epochs.empty());
    CHECK(r.tracker.events.empty());
    CHECK(r.final_prior.value == 0.01);

    Classifier expected = Classifier::linear(ds.world.feature_dim);
    Rng init_rng(mix_seed(config.seed, 0xF17ULL));
    expected.init_uniform(init_rng, config.init_half_range);
    REQUIRE(r.model.params() == expected.params());
}

TEST_CASE("pn objective never touches the prior state", "[trainer]") {
    const Dataset ds = small_dataset(5, 15, 0.4);
    TrainConfig config;
    config.objective = Objective::Pn;
    config.epochs = 2;
    const TrainResult r = run_training(ds, config);
    CHECK(r.final_prior.value == config.prior_initial);
    for (const StepRecord& s : r.log.steps) {
        const double counted =
            static_cast<double>(s.batch_positives) /
            static_cast<double>(s.batch_positives + s.batch_others);
        REQUIRE(s.pi_hat == counted);
    }
}

TEST_CASE("pu objective is clamped non-negative and updates the prior", "[trainer]") {
    const Dataset ds = small_dataset(5, 15, 0.4);
    TrainConfig config;
    config.epochs = 2;
    const TrainResult r = run_training(ds, config);
    CHECK(r.final_prior.value != config.prior_initial);
    for (const StepRecord& s : r.log.steps) REQUIRE(s.objective_value >= 0.0);
    // First recorded pi_hat is the first post-update value (update-before-loss).
    const double first = r.log.steps.front().pi_hat;
    CHECK(first >= 0.009);
    CHECK(first <= 0.109);
}

TEST_CASE("recorded pi_hat follows the EMA recurrence exactly", "[trainer]") {
    const Dataset ds = small_dataset(29, 12, 0.5);
    TrainConfig config;
    config.epochs = 2;
    const TrainResult r = run_training(ds, config);
    double prev = config.prior_initial;
    for (const StepRecord& s : r.log.steps) {
        // Invert the update: the implied batch fraction must be j/n for an
        // integer count j of confident scores.
        const double f = (s.pi_hat - config.prior_momentum * prev) /
                         (1.0 - config.prior_momentum);
        const double n = static_cast<double>(s.batch_positives + s.batch_others);
        const double j = std::round(f * n);
        REQUIRE(j >= 0.0);
        REQUIRE(j <= n);
        REQUIRE_THAT(f, WithinAbs(j / n, 1e-6));
        prev = s.pi_hat;
    }
}

TEST_CASE("after-loss timing logs the pre-update prior on the first step", "[trainer]") {
    const Dataset ds = small_dataset(29, 6, 0.5);
    TrainConfig config;
    config.epochs = 1;
    config.prior_update_timing = PriorUpdateTiming::AfterLoss;
    const TrainResult r = run_training(ds, config);
    REQUIRE_FALSE(r.log.steps.empty());
    CHECK(r.log.steps.front().pi_hat == 0.01);
    CHECK(r.final_prior.value != 0.01);
}

TEST_CASE("forgetting events cover every object of every trained scene", "[trainer]") {
    const Dataset ds = small_dataset(17, 10, 0.5);
    TrainConfig config;
    config.epochs = 2;
    const TrainResult r = run_training(ds, config);
    CHECK(r.tracker.events.size() == 2 * ds.total_objects());
    std::size_t labeled = 0;
    for (const ForgettingEvent& e : r.tracker.events) {
        REQUIRE(e.epoch >= 1);
        REQUIRE(e.epoch <= 2);
        labeled += e.labeled ? 1 : 0;
    }
    CHECK(labeled == 2 * ds.labeled_objects());
}

TEST_CASE("detection_rate_curves turns events into per-epoch percentages", "[trainer]") {
    ForgettingTracker tracker;
    tracker.events.push_back({1, 0, 0, true, true, true});
    tracker.events.push_back({1, 0, 1, true, false, true});
    tracker.events.push_back({1, 1, 0, false, false, false});
    tracker.events.push_back({1, 1, 1, false, true, false});
    tracker.events.push_back({2, 0, 0, true, false, false});

    const std::vector<DetectionRatePoint> curves = detection_rate_curves(tracker);
    REQUIRE(curves.size() == 2);
    CHECK(curves[0].epoch == 1);
    REQUIRE(curves[0].labeled_before.has_value());
    CHECK(*curves[0].labeled_before == 50.0);
    CHECK(*curves[0].labeled_after == 100.0);
    CHECK(*curves[0].unlabeled_before == 50.0);
    CHECK(*curves[0].unlabeled_after == 0.0);
    CHECK(curves[1].epoch == 2);
    CHECK(*curves[1].labeled_before == 0.0);
    CHECK_FALSE(curves[1].unlabeled_before.has_value());
    CHECK_FALSE(curves[1].unlabeled_after.has_value());
}

TEST_CASE("is_detected needs overlap and confidence together", "[trainer]") {
    WorldConfig world;
    const Scene scene = generate_scene(world, 0);
    const std::vector<Proposal> proposals = scene_proposals(scene, world);

    Classifier indifferent = Classifier::linear(world.feature_dim);  // scores 0.5 everywhere
    for (const ObjectInstance& obj : scene.objects)
        CHECK_FALSE(is_detected(indifferent, obj, proposals));

    Classifier confident = Classifier::linear(world.feature_dim);
    confident.params().back() = 50.0;  // bias-only, scores ~1 everywhere
    for (const ObjectInstance& obj : scene.objects)
        CHECK(is_detected(confident, obj, proposals));
    // An object outside every proposal cannot be detected at any confidence.
    const ObjectInstance nowhere{{0.0, 0.0, 0.5, 0.5}, true};
    CHECK_FALSE(is_detected(confident, nowhere, proposals));
}

TEST_CASE("score_scene_detections applies the emission cutoff", "[trainer]") {
    WorldConfig world;
    const std::vector<Scene> scenes = generate_scenes(world, 3);

    Classifier indifferent = Classifier::linear(world.feature_dim);
    CHECK(score_scene_detections(indifferent, scenes, world).size() == 3 * 128);
    CHECK(score_scene_detections(indifferent, scenes, world, 0.6).empty());

    Classifier confident = Classifier::linear(world.feature_dim);
    confident.params().back() = 50.0;
    const std::vector<Detection> all = score_scene_detections(confident, scenes, world, 0.9);
    CHECK(all.size() == 3 * 128);
    for (const Detection& d : all) REQUIRE(d.score >= 0.9);
}

TEST_CASE("train log and detection rate exports use the frozen layouts", "[trainer]") {
    TrainLog log;
    StepRecord s;
    s.step = 1;
    s.epoch = 1;
    s.objective_value = 0.5;
    s.breakdown.r_p_plus = 0.25;
    s.breakdown.r_p_minus = 1.5;
    s.breakdown.r_other_minus = 0.125;
    s.breakdown.clamp_active = true;
    s.pi_hat = 0.0625;
    log.steps.push_back(s);
    std::stringstream ss;
    write_train_log(ss, log);
    CHECK(ss.str() ==
          "step,epoch,objective,r_p_plus,r_p_minus,r_other_minus,clamp_active,pi_hat\n"
          "1,1,0.5,0.25,1.5,0.125,1,0.0625\n");

    DetectionRatePoint p;
    p.epoch = 3;
    p.labeled_before = 50.0;
    p.labeled_after = 75.0;
    std::stringstream ds;
    write_detection_rates(ds, {p});
    CHECK(ds.str() ==
          "epoch,stratum,phase,rate\n"
          "3,labeled,before,50\n"
          "3,labeled,after,75\n");
}

TEST_CASE("check_train_config rejects invalid settings", "[trainer]") {
    TrainConfig c;
    SECTION("negative epochs") {
        c.epochs = -1;
        CHECK_THROWS_AS(check_train_config(c), ConfigError);
    }
    SECTION("zero learning rate") {
        c.learning_rate = 0.0;
        CHECK_THROWS_AS(check_train_config(c), ConfigError);
    }
    SECTION("zero positive fraction") {
        c.max_positive_fraction = 0.0;
        CHECK_THROWS_AS(check_train_config(c), ConfigError);
    }
    SECTION("fixed mode without a value") {
        c.prior_mode = PriorMode::Fixed;
        CHECK_THROWS_AS(check_train_config(c), ConfigError);
    }
    SECTION("mlp without hidden units") {
        c.architecture = Architecture::MlpOneHidden;
        c.hidden_dim = 0;
        CHECK_THROWS_AS(check_train_config(c), ConfigError);
    }
}

TEST_CASE("train config round-trips through key=value text", "[trainer]") {
    TrainConfig c;
    c.objective = Objective::Pn;
    c.prior_mode = PriorMode::Fixed;
    c.fixed_prior = 0.25;
    c.prior_update_timing = PriorUpdateTiming::AfterLoss;
    c.clamp_policy = ClampPolicy::Defensive;
    c.loss.clip_epsilon = 1e-6;
    c.epochs = 7;
    c.learning_rate = 0.125;
    c.batch_anchors = 32;
    c.max_positive_fraction = 0.25;
    c.seed = 99;
    c.architecture = Architecture::MlpOneHidden;
    c.hidden_dim = 5;
    c.init_half_range = 0.2;
    c.detect_iou = 0.4;
    c.detect_confidence = 0.7;

    KeyValues kv;
    train_to_keyvalues(c, kv);
    const TrainConfig back = train_from_keyvalues(kv);
    CHECK(back.objective == c.objective);
    CHECK(back.prior_mode == c.prior_mode);
    REQUIRE(back.fixed_prior.has_value());
    CHECK(*back.fixed_prior == 0.25);
    CHECK(back.prior_update_timing == c.prior_update_timing);
    CHECK(back.clamp_policy == c.clamp_policy);
    CHECK(back.loss.clip_epsilon == c.loss.clip_epsilon);
    CHECK(back.epochs == c.epochs);
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.batch_anchors == c.batch_anchors);
    CHECK(back.max_positive_fraction == c.max_positive_fraction);
    CHECK(back.seed == c.seed);
    CHECK(back.architecture == c.architecture);
    CHECK(back.hidden_dim == c.hidden_dim);
    CHECK(back.init_half_range == c.init_half_range);
    CHECK(back.detect_iou == c.detect_iou);
    CHECK(back.detect_confidence == c.detect_confidence);

    // The fixed prior key only appears when one is configured.
    KeyValues dkv;
    train_to_keyvalues(TrainConfig{}, dkv);
    CHECK_FALSE(dkv.has("train.fixed_prior"));
    CHECK(dkv.require("train.objective") == "pu");
}
