// Command-line front end: dataset generation, training, evaluation, the
// label-missingness experiment grid, and a numeric gradient check.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
// (divergence, undefined metric, I/O trouble, failed cells or checks).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pudet/pudet.hpp"

namespace fs = std::filesystem;
using namespace pudet;

namespace {

// The only environment input: fallback output directory when --out is absent.
std::optional<std::string> env_out_dir() {
    const char* v = std::getenv("PUDET_OUT_DIR");
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

std::string resolve_out(const std::string& out_flag, const std::string& default_name) {
    if (!out_flag.empty()) return out_flag;
    if (auto dir = env_out_dir()) {
        std::cerr << "note: --out not given, using PUDET_OUT_DIR=" << *dir << "\n";
        return (fs::path(*dir) / default_name).string();
    }
    throw ConfigError("no output path: pass --out or set PUDET_OUT_DIR");
}

KeyValues load_config(const std::string& path) {
    if (path.empty()) return KeyValues{};
    return KeyValues::parse_file(path);
}

void write_text_file(const std::string& path, const std::function<void(std::ostream&)>& fn) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw ConfigError("cannot write file: " + path);
    fn(os);
    if (!os) throw ConfigError("failed while writing file: " + path);
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
    std::string config_path, out, mode;
    int scenes = 100;
    long long first_id = 0;
    double rho = -1.0;  // <0: take from config, default 0
    std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& args) {
    const KeyValues kv = load_config(args.config_path);
    Dataset ds;
    ds.world = world_from_keyvalues(kv);
    if (args.seed) ds.world.seed = *args.seed;
    ds.missing.rho = args.rho >= 0.0 ? args.rho : kv.get_real("missing.rho", 0.0);
    ds.missing.mode = missingness_mode_from(
        !args.mode.empty() ? args.mode
                           : kv.get_string("missing.mode", "per-annotation"));
    if (!(ds.missing.rho >= 0.0 && ds.missing.rho <= 1.0))
        throw ConfigError("rho must lie in [0, 1]");

    ds.scenes = generate_scenes(ds.world, args.scenes, args.first_id);
    if (ds.missing.mode == MissingnessMode::PerAnnotation) {
        Rng rng(mix_seed(ds.world.seed, kDiscardStreamSalt));
        discard_labels(ds.scenes, ds.missing, rng);
    } else {
        Rng rng(mix_seed(ds.world.seed, kSubsetStreamSalt));
        ds.scenes = make_full_pn_subset(ds.scenes, ds.missing.rho, rng);
    }

    const std::string out = resolve_out(args.out, "dataset.txt");
    write_dataset_file(out, ds);
    std::cout << "wrote " << out << ": " << ds.scenes.size() << " scenes, "
              << ds.total_objects() << " objects, " << ds.labeled_objects() << " labeled\n";
    return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data, config_path, out, objective;
    int epochs = -1;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
    const KeyValues kv = load_config(args.config_path);
    TrainConfig tc = train_from_keyvalues(kv);
    if (!args.objective.empty()) tc.objective = objective_from(args.objective);
    if (args.epochs >= 0) tc.epochs = args.epochs;
    if (args.seed) tc.seed = *args.seed;
    check_train_config(tc);

    const Dataset ds = read_dataset_file(args.data);
    const TrainResult tr = run_training(ds, tc);

    const std::string out_dir = resolve_out(args.out, "train");
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "model.txt").string(),
                    [&](std::ostream& os) { save_model(os, tr.model); });
    write_text_file((fs::path(out_dir) / "train_log.csv").string(),
                    [&](std::ostream& os) { write_train_log(os, tr.log); });
    write_text_file((fs::path(out_dir) / "detection_rates.csv").string(), [&](std::ostream& os) {
        write_detection_rates(os, detection_rate_curves(tr.tracker));
    });
    write_text_file((fs::path(out_dir) / "train-config.txt").string(), [&](std::ostream& os) {
        KeyValues echo;
        train_to_keyvalues(tc, echo);
        echo.write(os);
    });

    const double final_objective =
        tr.log.steps.empty() ? 0.0 : tr.log.steps.back().objective_value;
    std::cout << "trained " << tr.log.steps.size() << " steps over " << tc.epochs
              << " epochs on " << ds.scenes.size() << " scenes\n";
    std::cout << "final objective " << format_real(final_objective) << ", prior "
              << format_real(effective_prior(tr.final_prior)) << ", skipped "
              << tr.log.skipped_scenes << " scenes\n";
    std::cout << "outputs in " << out_dir << "\n";
    return 0;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
    std::string data, model, config_path, out;
    std::string metrics = "ap,recall,froc,sensitivity";
    double iou = 0.5;  // matching threshold for recall and FROC
    int k = 64;
};

int cmd_evaluate(const EvaluateArgs& args) {
    const KeyValues kv = load_config(args.config_path);
    const Dataset ds = read_dataset_file(args.data);
    std::ifstream ms(args.model, std::ios::binary);
    if (!ms) throw ConfigError("cannot open model file: " + args.model);
    const Classifier model = load_model(ms);

    std::vector<std::string> wanted;
    {
        std::stringstream ss(args.metrics);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) wanted.push_back(part);
    }
    if (wanted.empty()) throw ConfigError("metric list is empty");
    for (const std::string& m : wanted)
        if (m != "ap" && m != "recall" && m != "froc" && m != "sensitivity")
            throw ConfigError("unknown metric: " + m);
    auto has = [&wanted](const char* name) {
        for (const std::string& m : wanted)
            if (m == name) return true;
        return false;
    };

    ExperimentSpec defaults;  // reuse the grid defaults
    const std::vector<double> ap_thresholds =
        kv.get_real_list("eval.ap_thresholds", defaults.ap_thresholds);
    const std::vector<double> froc_grid = kv.get_real_list("eval.froc_grid", defaults.froc_grid);
    const std::vector<double> iou_grid = kv.get_real_list("eval.iou_grid", defaults.iou_grid);
    const double fp_allowance = kv.get_real("eval.fp_allowance", defaults.fp_allowance);

    const std::vector<Detection> detections = score_scene_detections(model, ds.scenes, ds.world);
    std::vector<EvalRow> rows;
    if (has("ap"))
        for (double t : ap_thresholds)
            rows.push_back({"ap", t, average_precision(detections, ds.scenes, t)});
    if (has("recall"))
        rows.push_back({"recall_at_k", static_cast<double>(args.k),
                        recall_at_k(detections, ds.scenes, args.k, args.iou)});
    if (has("froc")) {
        const std::vector<double> froc = froc_curve(detections, ds.scenes, froc_grid, args.iou);
        for (std::size_t i = 0; i < froc.size(); ++i)
            rows.push_back({"froc", froc_grid[i], froc[i]});
    }
    if (has("sensitivity")) {
        const std::vector<double> sens =
            sensitivity_vs_iou(detections, ds.scenes, iou_grid, fp_allowance);
        for (std::size_t i = 0; i < sens.size(); ++i)
            rows.push_back({"sensitivity_vs_iou", iou_grid[i], sens[i]});
    }

    if (args.out.empty() && !env_out_dir()) {
        write_eval_rows(std::cout, rows);
    } else {
        const std::string out = resolve_out(args.out, "eval.csv");
        write_text_file(out, [&](std::ostream& os) { write_eval_rows(os, rows); });
        std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
    }
    return 0;
}

// --- experiment -------------------------------------------------------------

struct ExperimentArgs {
    std::string config_path, out;
    int jobs = 0;
    std::optional<std::uint64_t> seed;
};

int cmd_experiment(const ExperimentArgs& args) {
    const KeyValues kv = load_config(args.config_path);
    ExperimentSpec spec = experiment_from_keyvalues(kv);
    spec.out_dir = resolve_out(args.out, "experiment");
    if (args.jobs > 0) spec.jobs = args.jobs;
    if (args.seed) spec.world.seed = *args.seed;
    check_experiment_spec(spec);

    const ExperimentResult result = run_experiment(spec);
    std::cout << "ran " << result.cells.size() << " cells, " << result.failed << " failed\n";
    std::cout << "results in " << spec.out_dir << "\n";
    if (result.failed > 0) {
        for (const CellResult& cell : result.cells)
            if (!cell.ok)
                std::cerr << "cell " << cell_name(cell.key) << " failed: " << cell.error << "\n";
        return 2;
    }
    return 0;
}

// --- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
    std::string mode = "all";    // pn | pu | nnpu | all
    std::string policy = "all";  // hard-zero | defensive | all
    std::string arch = "all";    // linear | mlp-1-hidden | all
    int dim = 8, hidden = 4, trials = 100;
    double h = 1e-6, tol = 1e-5;
    std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    if (args.trials < 1) throw ConfigError("trials must be at least 1");
    if (!(args.tol > 0.0)) throw ConfigError("tolerance must be positive");
    std::vector<RiskMode> modes;
    if (args.mode == "all") modes = {RiskMode::Pn, RiskMode::PuUnclamped, RiskMode::NnPu};
    else if (args.mode == "pn") modes = {RiskMode::Pn};
    else if (args.mode == "pu") modes = {RiskMode::PuUnclamped};
    else if (args.mode == "nnpu") modes = {RiskMode::NnPu};
    else throw ConfigError("unknown mode: " + args.mode);
    std::vector<ClampPolicy> policies;
    if (args.policy == "all") policies = {ClampPolicy::HardZero, ClampPolicy::Defensive};
    else policies = {clamp_policy_from(args.policy)};
    std::vector<Architecture> archs;
    if (args.arch == "all") archs = {Architecture::Linear, Architecture::MlpOneHidden};
    else archs = {architecture_from(args.arch)};

    const LossFunction lf;
    bool all_ok = true;
    for (Architecture arch : archs) {
        for (RiskMode mode : modes) {
            // the clamp policy only affects the nnPU objective
            const std::vector<ClampPolicy> relevant =
                mode == RiskMode::NnPu ? policies
                                       : std::vector<ClampPolicy>{ClampPolicy::HardZero};
            for (ClampPolicy policy : relevant) {
                Rng rng(mix_seed(args.seed,
                                 static_cast<std::uint64_t>(static_cast<int>(arch)) * 100 +
                                     static_cast<std::uint64_t>(static_cast<int>(mode)) * 10 +
                                     static_cast<std::uint64_t>(static_cast<int>(policy))));
                double worst = 0.0;
                for (int t = 0; t < args.trials; ++t) {
                    Classifier model = arch == Architecture::Linear
                                           ? Classifier::linear(args.dim)
                                           : Classifier::mlp(args.dim, args.hidden);
                    model.init_uniform(rng, 0.5);
                    FeatureBatch batch;
                    const int n_pos = rng.uniform_int(1, 6);
                    const int n_other = rng.uniform_int(1, 12);
                    for (int i = 0; i < n_pos; ++i) {
                        std::vector<double> x(static_cast<std::size_t>(args.dim));
                        for (double& v : x) v = rng.normal(0.7, 0.8);
                        batch.positive.push_back(std::move(x));
                    }
                    for (int i = 0; i < n_other; ++i) {
                        std::vector<double> x(static_cast<std::size_t>(args.dim));
                        for (double& v : x) v = rng.normal(0.0, 0.8);
                        batch.other.push_back(std::move(x));
                    }
                    const double pi_p = rng.uniform(0.05, 0.8);
                    worst = std::max(worst,
                                     grad_check(model, batch, mode, pi_p, lf, policy, args.h));
                }
                const bool ok = worst <= args.tol;
                all_ok = all_ok && ok;
                std::cout << architecture_name(arch) << " "
                          << (mode == RiskMode::Pn         ? "pn"
                              : mode == RiskMode::PuUnclamped ? "pu"
                                                              : "nnpu");
                if (mode == RiskMode::NnPu) std::cout << " " << clamp_policy_name(policy);
                std::cout << ": max relative error " << format_real(worst) << " over "
                          << args.trials << " trials -> " << (ok ? "ok" : "FAIL") << "\n";
            }
        }
    }
    if (!all_ok) {
        std::cerr << "gradient check exceeded tolerance " << format_real(args.tol) << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"positive-unlabeled objectness training on a synthetic detection world"};
    app.require_subcommand(1);

    std::uint64_t gen_seed_value = 0, tra_seed_value = 0, exp_seed_value = 0;

    GenerateArgs gen;
    CLI::App* generate = app.add_subcommand("generate", "generate a scene dataset file");
    generate->add_option("--config", gen.config_path, "key=value config file (world.*, missing.*)");
    generate->add_option("--scenes", gen.scenes, "number of scenes")->check(CLI::PositiveNumber);
    generate->add_option("--first-id", gen.first_id, "id of the first scene");
    generate->add_option("--rho", gen.rho, "label missingness rate in [0, 1]");
    generate->add_option("--mode", gen.mode, "per-annotation or per-image");
    auto* gen_seed = generate->add_option("--seed", gen_seed_value, "world seed override");
    generate->add_option("--out", gen.out, "output dataset path");

    TrainArgs tra;
    CLI::App* train = app.add_subcommand("train", "train a classifier on a dataset");
    train->add_option("--data", tra.data, "training dataset file")->required();
    train->add_option("--config", tra.config_path, "key=value config file (train.*)");
    train->add_option("--objective", tra.objective, "pn or pu (overrides config)");
    train->add_option("--epochs", tra.epochs, "epoch count override");
    auto* tra_seed = train->add_option("--seed", tra_seed_value, "training seed override");
    train->add_option("--out", tra.out, "output directory");

    EvaluateArgs eva;
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a model against a dataset");
    evaluate->add_option("--data", eva.data, "evaluation dataset file")->required();
    evaluate->add_option("--model", eva.model, "model snapshot file")->required();
    evaluate->add_option("--config", eva.config_path, "key=value config file (eval.*)");
    evaluate->add_option("--metrics", eva.metrics,
                         "comma list from {ap, recall, froc, sensitivity}");
    evaluate->add_option("--iou", eva.iou, "matching IoU for recall and FROC");
    evaluate->add_option("--k", eva.k, "k for recall at k")->check(CLI::PositiveNumber);
    evaluate->add_option("--out", eva.out, "output csv path (stdout when absent)");

    ExperimentArgs exp;
    CLI::App* experiment =
        app.add_subcommand("experiment", "run the label-missingness comparison grid");
    experiment->add_option("--config", exp.config_path, "key=value experiment config");
    experiment->add_option("--jobs", exp.jobs, "worker threads")->check(CLI::PositiveNumber);
    auto* exp_seed = experiment->add_option("--seed", exp_seed_value, "world seed override");
    experiment->add_option("--out", exp.out, "output directory");

    GradcheckArgs grc;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
    gradcheck->add_option("--mode", grc.mode, "pn, pu, nnpu or all");
    gradcheck->add_option("--policy", grc.policy, "hard-zero, defensive or all");
    gradcheck->add_option("--arch", grc.arch, "linear, mlp-1-hidden or all");
    gradcheck->add_option("--dim", grc.dim, "feature dimension")->check(CLI::PositiveNumber);
    gradcheck->add_option("--hidden", grc.hidden, "hidden width")->check(CLI::PositiveNumber);
    gradcheck->add_option("--trials", grc.trials, "random trials per combination");
    gradcheck->add_option("--step", grc.h, "finite-difference step");
    gradcheck->add_option("--tol", grc.tol, "max acceptable relative error");
    gradcheck->add_option("--seed", grc.seed, "trial seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (generate->parsed()) {
            if (gen_seed->count() > 0) gen.seed = gen_seed_value;
            return cmd_generate(gen);
        }
        if (train->parsed()) {
            if (tra_seed->count() > 0) tra.seed = tra_seed_value;
            return cmd_train(tra);
        }
        if (evaluate->parsed()) return cmd_evaluate(eva);
        if (experiment->parsed()) {
            if (exp_seed->count() > 0) exp.seed = exp_seed_value;
            return cmd_experiment(exp);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(grc);
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const InvalidInputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
