// Classifier forward/backward/SGD and the finite-difference gradient check,
// including the clamp-branch handling the check must stay consistent with.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "pudet/pudet.hpp"

using namespace pudet;
using Catch::Matchers::WithinAbs;

namespace {

const LossFunction kLf;

FeatureBatch random_batch(Rng& rng, int dim, int n_pos, int n_other) {
    FeatureBatch b;
    for (int i = 0; i < n_pos; ++i) {
        std::vector<double> x(static_cast<std::size_t>(dim));
        for (double& v : x) v = rng.normal(0.7, 0.8);
        b.positive.push_back(std::move(x));
    }
    for (int i = 0; i < n_other; ++i) {
        std::vector<double> x(static_cast<std::size_t>(dim));
        for (double& v : x) v = rng.normal(0.0, 0.8);
        b.other.push_back(std::move(x));
    }
    return b;
}

}  // namespace

TEST_CASE("zero weights score one half and layouts have the promised size", "[model]") {
    const Classifier lin = Classifier::linear(8);
    CHECK(lin.params().size() == 9);
    CHECK(lin.forward(std::vector<double>(8, 3.0)) == 0.5);

    const Classifier mlp = Classifier::mlp(8, 4);
    CHECK(mlp.params().size() == 4 * 8 + 4 + 4 + 1);
    CHECK(mlp.forward(std::vector<double>(8, -2.0)) == 0.5);

    CHECK_THROWS_AS(Classifier::linear(0), InvalidInputError);
    CHECK_THROWS_AS(Classifier::mlp(4, 0), InvalidInputError);
}

TEST_CASE("forward validates features and stays inside (0,1)", "[model]") {
    Classifier lin = Classifier::linear(2);
    CHECK_THROWS_AS(lin.forward(std::vector<double>{1.0}), InvalidInputError);
    CHECK_THROWS_AS(lin.forward(std::vector<double>{1.0, std::nan("")}), InvalidInputError);

    lin.params() = {1000.0, 1000.0, 0.0};
    const double hi = lin.forward(std::vector<double>{50.0, 50.0});
    const double lo = lin.forward(std::vector<double>{-50.0, -50.0});
    CHECK(hi <= 1.0 - 1e-15);
    CHECK(lo >= 1e-15);
    CHECK(hi > 0.99);
    CHECK(lo < 0.01);
}

TEST_CASE("seeded initialization and forward are deterministic", "[model]") {
    Rng a(99), b(99);
    Classifier m1 = Classifier::mlp(6, 3), m2 = Classifier::mlp(6, 3);
    m1.init_uniform(a, 0.1);
    m2.init_uniform(b, 0.1);
    REQUIRE(m1.params() == m2.params());
    for (double p : m1.params()) {
        CHECK(p >= -0.1);
        CHECK(p <= 0.1);
    }
    const std::vector<double> x = {0.3, -0.1, 0.7, 0.2, -0.5, 1.1};
    CHECK(m1.forward(x) == m2.forward(x));
}

TEST_CASE("linear backward matches the closed-form chain rule", "[model]") {
    Classifier lin = Classifier::linear(2);
    lin.params() = {0.3, -0.2, 0.1};
    const std::vector<double> x = {1.0, 2.0};
    // logit = 0.3 - 0.4 + 0.1 = 0, score = 0.5, dz = g * 0.25
    const double g = 0.7;
    const std::vector<double> grad = lin.backward({x}, {g});
    REQUIRE(grad.size() == 3);
    CHECK_THAT(grad[0], WithinAbs(g * 0.25 * 1.0, 1e-15));
    CHECK_THAT(grad[1], WithinAbs(g * 0.25 * 2.0, 1e-15));
    CHECK_THAT(grad[2], WithinAbs(g * 0.25, 1e-15));

    const std::vector<double> zero = lin.backward({x, x}, {0.0, 0.0});
    for (double v : zero) CHECK(v == 0.0);

    CHECK_THROWS_AS(lin.backward({x}, {0.1, 0.2}), InvalidInputError);
}

TEST_CASE("sgd applies the frozen update and guards against divergence", "[model]") {
    Classifier lin = Classifier::linear(1);
    lin.params() = {1.0, 0.0};
    OptimizerState opt{0.1, 0};
    sgd_step(lin, {0.5, 0.0}, opt);
    CHECK_THAT(lin.params()[0], WithinAbs(0.95, 1e-15));
    CHECK(lin.params()[1] == 0.0);
    CHECK(opt.step_count == 1);

    sgd_step(lin, {0.0, 0.0}, opt);
    CHECK_THAT(lin.params()[0], WithinAbs(0.95, 1e-15));
    CHECK(opt.step_count == 2);

    CHECK_THROWS_AS(sgd_step(lin, {std::numeric_limits<double>::infinity(), 0.0}, opt),
                    DivergenceError);
    CHECK_THROWS_AS(sgd_step(lin, {0.1}, opt), InvalidInputError);
    OptimizerState bad{-1.0, 0};
    CHECK_THROWS_AS(sgd_step(lin, {0.0, 0.0}, bad), InvalidInputError);
}

TEST_CASE("gradient check passes across architectures, modes and policies", "[model]") {
    Rng rng(31);
    for (int trial = 0; trial < 6; ++trial) {
        for (const Architecture arch : {Architecture::Linear, Architecture::MlpOneHidden}) {
            Classifier model = arch == Architecture::Linear ? Classifier::linear(5)
                                                            : Classifier::mlp(5, 3);
            model.init_uniform(rng, 0.5);
            const FeatureBatch batch = random_batch(rng, 5, rng.uniform_int(1, 4),
                                                    rng.uniform_int(1, 8));
            const double pi = rng.uniform(0.05, 0.8);
            CHECK(grad_check(model, batch, RiskMode::Pn, 0.0, kLf, ClampPolicy::HardZero) < 1e-6);
            CHECK(grad_check(model, batch, RiskMode::PuUnclamped, pi, kLf,
                             ClampPolicy::HardZero) < 1e-5);
            for (const ClampPolicy policy : {ClampPolicy::HardZero, ClampPolicy::Defensive})
                CHECK(grad_check(model, batch, RiskMode::NnPu, pi, kLf, policy) < 1e-5);
        }
    }
}

TEST_CASE("gradient check differentiates the active clamp branch", "[model]") {
    // positives far above the unlabeled pool force a strongly negative
    // correction term, well away from the branch boundary
    Classifier lin = Classifier::linear(1);
    lin.params() = {2.0, 0.0};
    FeatureBatch batch;
    batch.positive = {{2.0}, {2.2}};
    batch.other = {{-2.0}, {-2.1}, {-1.9}};
    const double pi = 0.9;
    REQUIRE(batch_risk(lin, batch, RiskMode::NnPu, pi, kLf).clamp_active);
    CHECK(grad_check(lin, batch, RiskMode::NnPu, pi, kLf, ClampPolicy::HardZero) < 1e-5);
    CHECK(grad_check(lin, batch, RiskMode::NnPu, pi, kLf, ClampPolicy::Defensive) < 1e-5);
}

TEST_CASE("finite-difference step outside [1e-8, 1e-4] is rejected", "[model]") {
    Classifier lin = Classifier::linear(2);
    FeatureBatch batch;
    batch.positive = {{0.5, 0.5}};
    batch.other = {{-0.5, 0.1}};
    CHECK_THROWS_AS(grad_check(lin, batch, RiskMode::Pn, 0.0, kLf, ClampPolicy::HardZero, 1e-1),
                    InvalidInputError);
    CHECK_THROWS_AS(grad_check(lin, batch, RiskMode::Pn, 0.0, kLf, ClampPolicy::HardZero, 1e-9),
                    InvalidInputError);
}

TEST_CASE("sgd on a separable pn batch decreases the risk monotonically", "[model]") {
    Classifier lin = Classifier::linear(1);
    FeatureBatch batch;
    for (int i = 0; i < 5; ++i) {
        batch.positive.push_back({1.0});
        batch.other.push_back({-1.0});
    }
    OptimizerState opt{0.1, 0};
    double prev = batch_risk(lin, batch, RiskMode::Pn, 0.0, kLf).total;
    for (int step = 0; step < 200; ++step) {
        sgd_step(lin,
                 batch_risk_gradients(lin, batch, RiskMode::Pn, 0.0, kLf, ClampPolicy::HardZero),
                 opt);
        const double now = batch_risk(lin, batch, RiskMode::Pn, 0.0, kLf).total;
        REQUIRE(now <= prev + 1e-12);
        prev = now;
    }
    CHECK(prev < 0.1);
}

TEST_CASE("snapshots round-trip bit-exactly", "[model]") {
    Rng rng(47);
    Classifier mlp = Classifier::mlp(7, 4);
    mlp.init_uniform(rng, 0.3);
    std::stringstream ss;
    save_model(ss, mlp);
    const Classifier back = load_model(ss);
    CHECK(back.architecture() == Architecture::MlpOneHidden);
    CHECK(back.input_dim() == 7);
    CHECK(back.hidden_dim() == 4);
    CHECK(back.params() == mlp.params());

    std::stringstream bad("not-a-model v9\n");
    CHECK_THROWS_AS(load_model(bad), ConfigError);

    std::stringstream truncated("pudet-model v1\narchitecture linear\ninput_dim 2\n"
                                "hidden_dim 0\nparams 3\n0.5\n");
    CHECK_THROWS_AS(load_model(truncated), ConfigError);

    std::stringstream mismatch("pudet-model v1\narchitecture linear\ninput_dim 2\n"
                               "hidden_dim 0\nparams 7\n0\n0\n0\n0\n0\n0\n0\n");
    CHECK_THROWS_AS(load_model(mismatch), ConfigError);
}
