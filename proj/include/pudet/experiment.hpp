#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pudet/config.hpp"
#include "pudet/dataset_io.hpp"
#include "pudet/errors.hpp"
#include "pudet/metrics.hpp"
#include "pudet/scene.hpp"
#include "pudet/trainer.hpp"

namespace pudet {

// Label-availability settings compared by the experiment grid:
//   pn       every surviving annotation is a positive, everything else is
//            treated as negative (missing labels poison the negatives)
//   full-pn  only fully annotated scenes are kept, so the negatives are
//            clean but the dataset shrinks with rho
//   pu       same data as pn, but unlabeled proposals are treated as
//            unlabeled and trained with the non-negative PU objective
enum class Setting { Pn, FullPn, Pu };

inline const char* setting_name(Setting s) {
    switch (s) {
        case Setting::Pn: return "pn";
        case Setting::FullPn: return "full-pn";
        case Setting::Pu: return "pu";
    }
    throw InvalidInputError("unknown setting");
}

inline Setting setting_from(const std::string& s) {
    if (s == "pn") return Setting::Pn;
    if (s == "full-pn") return Setting::FullPn;
    if (s == "pu") return Setting::Pu;
    throw ConfigError("unknown setting: " + s);
}

struct ExperimentSpec {
    WorldConfig world;
    TrainConfig train;  // template; objective and seeds are set per cell
    std::vector<double> rho_grid = {0.0, 0.1, 0.3, 0.5, 0.7};
    std::vector<Setting> settings = {Setting::Pn, Setting::FullPn, Setting::Pu};
    std::vector<std::uint64_t> replicate_seeds = {1, 2, 3};
    int train_scenes = 1000;
    int test_scenes = 200;
    // evaluation
    std::vector<double> ap_thresholds = {0.25, 0.5, 0.75};
    double eval_iou = 0.5;  // matching threshold for recall and FROC
    int recall_k = 64;
    std::vector<double> froc_grid = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
    std::vector<double> iou_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double fp_allowance = 1.0;  // for the sensitivity-vs-IoU curve
    // extra pu cells trained with these hand-tuned fixed priors
    std::vector<double> fixed_prior_sweep;
    std::string out_dir;  // empty: keep results in memory only
    int jobs = 1;
};

inline void check_experiment_spec(const ExperimentSpec& spec) {
    check_world_config(spec.world);
    check_train_config(spec.train);
    if (spec.rho_grid.empty()) throw ConfigError("rho grid is empty");
    for (std::size_t i = 0; i < spec.rho_grid.size(); ++i) {
        if (!(spec.rho_grid[i] >= 0.0 && spec.rho_grid[i] < 1.0))
            throw ConfigError("rho values must lie in [0, 1)");
        if (i > 0 && spec.rho_grid[i] <= spec.rho_grid[i - 1])
            throw ConfigError("rho grid must be strictly ascending");
    }
    if (spec.settings.empty() && spec.fixed_prior_sweep.empty())
        throw ConfigError("no settings selected");
    if (spec.replicate_seeds.empty()) throw ConfigError("no replicate seeds");
    if (spec.train_scenes <= 0 || spec.test_scenes <= 0)
        throw ConfigError("scene counts must be positive");
    if (spec.ap_thresholds.empty()) throw ConfigError("ap threshold list is empty");
    for (double t : spec.ap_thresholds)
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError("ap thresholds must lie in (0, 1]");
    if (spec.recall_k < 1) throw ConfigError("recall_k must be at least 1");
    for (double p : spec.fixed_prior_sweep)
        if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fixed priors must lie in (0, 1]");
    if (spec.jobs < 1) throw ConfigError("jobs must be at least 1");
}

// One grid point. A fixed_prior value marks a hand-tuned pu cell; its
// setting label becomes "pu-fixed<value>" in the result table.
struct CellKey {
    Setting setting = Setting::Pn;
    double rho = 0.0;
    std::uint64_t replicate_seed = 0;
    std::optional<double> fixed_prior;
};

namespace detail {
// short form for identifiers: enough digits to distinguish grid values
inline std::string short_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}
}  // namespace detail

inline std::string cell_setting_label(const CellKey& key) {
    if (key.fixed_prior) return std::string("pu-fixed") + detail::short_real(*key.fixed_prior);
    return setting_name(key.setting);
}

inline std::string cell_name(const CellKey& key) {
    return cell_setting_label(key) + "-rho" + detail::short_real(key.rho) + "-seed" +
           std::to_string(key.replicate_seed);
}

struct CellResult {
    CellKey key;
    bool ok = false;
    std::string error;
    std::vector<EvalRow> metrics;
    std::vector<std::pair<long, double>> pi_trajectory;  // pu cells: (step, pi_hat)
    double final_pi = std::numeric_limits<double>::quiet_NaN();
    Classifier model = Classifier::linear(1);
};

struct ExperimentResult {
    std::vector<CellResult> cells;  // canonical enumeration order
    std::size_t failed = 0;
};

// Substream salts deriving the per-replicate worlds and the training stream.
// Label-state streams reuse the public salts from scene.hpp so a dataset
// written by the generation tool matches an in-memory experiment cell.
namespace detail {
constexpr std::uint64_t kTrainWorldSalt = 0x7261ULL;
constexpr std::uint64_t kTrainRunSalt = 0x7124ULL;
}  // namespace detail

// The shared fully-labeled test world: seed offset +1e6 from the base world,
// one split reused by every cell so metric differences come from training,
// never from test-set noise.
inline WorldConfig experiment_test_world(const ExperimentSpec& spec) {
    WorldConfig w = spec.world;
    w.seed = spec.world.seed + 1'000'000;
    return w;
}

inline std::vector<Scene> experiment_test_scenes(const ExperimentSpec& spec) {
    return generate_scenes(experiment_test_world(spec), spec.test_scenes, 1'000'000);
}

// Per-replicate training world: scenes differ across replicate seeds but are
// identical across settings and rho within one replicate.
inline WorldConfig experiment_train_world(const ExperimentSpec& spec, std::uint64_t replicate) {
    WorldConfig w = spec.world;
    w.seed = mix_seed(spec.world.seed, mix_seed(replicate, detail::kTrainWorldSalt));
    return w;
}

// Training data for one cell. The discard stream depends on the replicate
// only, and one uniform is drawn per object regardless of rho, so the labels
// missing at a smaller rho are a subset of those missing at a larger rho and
// pn/pu see byte-identical label states. The full-pn subset draws from its
// own replicate-only stream, giving nested scene subsets across rho.
inline Dataset experiment_cell_dataset(const ExperimentSpec& spec, const CellKey& key) {
    Dataset ds;
    ds.world = experiment_train_world(spec, key.replicate_seed);
    ds.scenes = generate_scenes(ds.world, spec.train_scenes);
    if (key.setting == Setting::FullPn) {
        Rng subset_rng(mix_seed(ds.world.seed, kSubsetStreamSalt));
        ds.scenes = make_full_pn_subset(ds.scenes, key.rho, subset_rng);
        ds.missing = {key.rho, MissingnessMode::PerImage};
    } else {
        Rng discard_rng(mix_seed(ds.world.seed, kDiscardStreamSalt));
        MissingnessSpec missing{key.rho, MissingnessMode::PerAnnotation};
        discard_labels(ds.scenes, missing, discard_rng);
        ds.missing = missing;
    }
    return ds;
}

inline TrainConfig experiment_cell_train_config(const ExperimentSpec& spec, const CellKey& key) {
    TrainConfig tc = spec.train;
    tc.objective = (key.setting == Setting::Pu || key.fixed_prior) ? Objective::Pu : Objective::Pn;
    if (key.fixed_prior) {
        tc.prior_mode = PriorMode::Fixed;
        tc.fixed_prior = key.fixed_prior;
    }
    // same stream across settings and rho: identical init and scene order,
    // so cells differ only in their label state and objective
    tc.seed = mix_seed(key.replicate_seed, detail::kTrainRunSalt);
    return tc;
}

inline std::vector<EvalRow> evaluate_detections(const ExperimentSpec& spec,
                                                const std::vector<Detection>& detections,
                                                const std::vector<Scene>& test) {
    std::vector<EvalRow> rows;
    for (double t : spec.ap_thresholds)
        rows.push_back({"ap", t, average_precision(detections, test, t)});
    rows.push_back({"recall_at_k", static_cast<double>(spec.recall_k),
                    recall_at_k(detections, test, spec.recall_k, spec.eval_iou)});
    const std::vector<double> froc = froc_curve(detections, test, spec.froc_grid, spec.eval_iou);
    for (std::size_t i = 0; i < froc.size(); ++i)
        rows.push_back({"froc", spec.froc_grid[i], froc[i]});
    const std::vector<double> sens =
        sensitivity_vs_iou(detections, test, spec.iou_grid, spec.fp_allowance);
    for (std::size_t i = 0; i < sens.size(); ++i)
        rows.push_back({"sensitivity_vs_iou", spec.iou_grid[i], sens[i]});
    return rows;
}

// Train and evaluate one cell. Self-contained on purpose: regenerating the
// test split per cell costs little and keeps cells runnable in any order or
// thread.
inline CellResult run_cell(const ExperimentSpec& spec, const CellKey& key) {
    CellResult result;
    result.key = key;
    try {
        const Dataset ds = experiment_cell_dataset(spec, key);
        const TrainConfig tc = experiment_cell_train_config(spec, key);
        const TrainResult tr = run_training(ds, tc);
        const WorldConfig test_world = experiment_test_world(spec);
        const std::vector<Scene> test = experiment_test_scenes(spec);
        const std::vector<Detection> detections =
            score_scene_detections(tr.model, test, test_world);
        result.metrics = evaluate_detections(spec, detections, test);
        if (tc.objective == Objective::Pu) {
            result.pi_trajectory.reserve(tr.log.steps.size());
            for (const StepRecord& r : tr.log.steps)
                result.pi_trajectory.emplace_back(r.step, r.pi_hat);
            result.final_pi = effective_prior(tr.final_prior);
        }
        result.model = tr.model;
        result.ok = true;
    } catch (const std::exception& e) {
        result.ok = false;
        result.error = e.what();
    }
    return result;
}

// Grid enumeration: settings x rho x replicate, then the fixed-prior sweep
// cells. This order is the canonical order of the aggregate table.
inline std::vector<CellKey> enumerate_cells(const ExperimentSpec& spec) {
    std::vector<CellKey> cells;
    for (Setting s : spec.settings)
        for (double rho : spec.rho_grid)
            for (std::uint64_t seed : spec.replicate_seeds)
                cells.push_back({s, rho, seed, std::nullopt});
    for (double prior : spec.fixed_prior_sweep)
        for (double rho : spec.rho_grid)
            for (std::uint64_t seed : spec.replicate_seeds)
                cells.push_back({Setting::Pu, rho, seed, prior});
    return cells;
}

inline void write_results_table(std::ostream& os, const ExperimentResult& result) {
    os << "setting,rho,seed,metric,threshold,value\n";
    for (const CellResult& cell : result.cells) {
        if (!cell.ok) continue;
        const std::string label = cell_setting_label(cell.key);
        for (const EvalRow& row : cell.metrics)
            os << label << "," << format_real(cell.key.rho) << "," << cell.key.replicate_seed
               << "," << row.metric << "," << format_real(row.threshold) << ","
               << format_real(row.value) << "\n";
    }
}

inline void write_failures_table(std::ostream& os, const ExperimentResult& result) {
    os << "setting,rho,seed,error\n";
    for (const CellResult& cell : result.cells) {
        if (cell.ok) continue;
        std::string msg = cell.error;
        for (char& c : msg)
            if (c == ',' || c == '\n') c = ';';
        os << cell_setting_label(cell.key) << "," << format_real(cell.key.rho) << ","
           << cell.key.replicate_seed << "," << msg << "\n";
    }
}

namespace detail {

inline void write_cell_outputs(const ExperimentSpec& spec, const std::string& config_text,
                               const CellResult& cell) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(spec.out_dir) / "cells" / cell_name(cell.key);
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "metrics.csv", std::ios::binary);
        write_eval_rows(os, cell.metrics);
    }
    if (!cell.pi_trajectory.empty()) {
        std::ofstream os(dir / "pi_trajectory.csv", std::ios::binary);
        os << "step,pi_hat\n";
        for (const auto& [step, pi] : cell.pi_trajectory)
            os << step << "," << format_real(pi) << "\n";
    }
    {
        std::ofstream os(dir / "model.txt", std::ios::binary);
        save_model(os, cell.model);
    }
    {
        std::ofstream os(dir / "provenance.txt", std::ios::binary);
        os << "setting=" << cell_setting_label(cell.key) << "\n";
        os << "rho=" << format_real(cell.key.rho) << "\n";
        os << "replicate_seed=" << cell.key.replicate_seed << "\n";
        os << "train_world_seed=" << experiment_train_world(spec, cell.key.replicate_seed).seed
           << "\n";
        os << "test_world_seed=" << experiment_test_world(spec).seed << "\n";
        os << "train_run_seed=" << experiment_cell_train_config(spec, cell.key).seed << "\n";
        os << "experiment_config_hash=" << content_hash(config_text) << "\n";
    }
}

}  // namespace detail

inline void experiment_to_keyvalues(const ExperimentSpec& spec, KeyValues& kv);

// Run every cell (worker pool when jobs > 1; cells share nothing mutable) and
// write the aggregate outputs in canonical order once all cells finished, so
// the bytes on disk never depend on scheduling.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    check_experiment_spec(spec);
    const std::vector<CellKey> cells = enumerate_cells(spec);
    ExperimentResult result;
    result.cells.resize(cells.size());

    const int workers = std::min<int>(spec.jobs, static_cast<int>(cells.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) result.cells[i] = run_cell(spec, cells[i]);
    } else {
        std::atomic<std::size_t> next{0};
        auto work = [&]() {
            for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                result.cells[i] = run_cell(spec, cells[i]);
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int t = 0; t < workers; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    for (const CellResult& cell : result.cells)
        if (!cell.ok) ++result.failed;

    if (!spec.out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(spec.out_dir);
        KeyValues kv;
        experiment_to_keyvalues(spec, kv);
        std::ostringstream config_text;
        kv.write(config_text);
        {
            std::ofstream os(fs::path(spec.out_dir) / "results.csv", std::ios::binary);
            write_results_table(os, result);
        }
        if (result.failed > 0) {
            std::ofstream os(fs::path(spec.out_dir) / "failures.csv", std::ios::binary);
            write_failures_table(os, result);
        }
        {
            std::ofstream os(fs::path(spec.out_dir) / "experiment-config.txt", std::ios::binary);
            os << config_text.str();
        }
        for (const CellResult& cell : result.cells)
            if (cell.ok) detail::write_cell_outputs(spec, config_text.str(), cell);
    }
    return result;
}

// --- config (de)serialization ----------------------------------------------

inline void experiment_to_keyvalues(const ExperimentSpec& spec, KeyValues& kv) {
    world_to_keyvalues(spec.world, kv);
    train_to_keyvalues(spec.train, kv);
    kv.set_real_list("experiment.rho_grid", spec.rho_grid);
    std::string settings;
    for (std::size_t i = 0; i < spec.settings.size(); ++i) {
        if (i) settings += ",";
        settings += setting_name(spec.settings[i]);
    }
    kv.set("experiment.settings", settings);
    std::string seeds;
    for (std::size_t i = 0; i < spec.replicate_seeds.size(); ++i) {
        if (i) seeds += ",";
        seeds += std::to_string(spec.replicate_seeds[i]);
    }
    kv.set("experiment.seeds", seeds);
    kv.set_int("experiment.train_scenes", spec.train_scenes);
    kv.set_int("experiment.test_scenes", spec.test_scenes);
    kv.set_real_list("experiment.ap_thresholds", spec.ap_thresholds);
    kv.set_real("experiment.eval_iou", spec.eval_iou);
    kv.set_int("experiment.recall_k", spec.recall_k);
    kv.set_real_list("experiment.froc_grid", spec.froc_grid);
    kv.set_real_list("experiment.iou_grid", spec.iou_grid);
    kv.set_real("experiment.fp_allowance", spec.fp_allowance);
    if (!spec.fixed_prior_sweep.empty())
        kv.set_real_list("experiment.fixed_prior_sweep", spec.fixed_prior_sweep);
    kv.set_int("experiment.jobs", spec.jobs);
}

inline ExperimentSpec experiment_from_keyvalues(const KeyValues& kv) {
    ExperimentSpec spec;
    spec.world = world_from_keyvalues(kv);
    spec.train = train_from_keyvalues(kv);
    spec.rho_grid = kv.get_real_list("experiment.rho_grid", spec.rho_grid);
    if (auto s = kv.get("experiment.settings")) {
        spec.settings.clear();
        std::stringstream ss(*s);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const std::string t = detail::trim(part);
            if (!t.empty()) spec.settings.push_back(setting_from(t));
        }
    }
    if (auto s = kv.get("experiment.seeds")) {
        spec.replicate_seeds.clear();
        std::stringstream ss(*s);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const std::string t = detail::trim(part);
            if (t.empty()) continue;
            char* end = nullptr;
            const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
            if (end == t.c_str() || *end != '\0')
                throw ConfigError("bad replicate seed: '" + t + "'");
            spec.replicate_seeds.push_back(v);
        }
    }
    spec.train_scenes = static_cast<int>(kv.get_int("experiment.train_scenes", spec.train_scenes));
    spec.test_scenes = static_cast<int>(kv.get_int("experiment.test_scenes", spec.test_scenes));
    spec.ap_thresholds = kv.get_real_list("experiment.ap_thresholds", spec.ap_thresholds);
    spec.eval_iou = kv.get_real("experiment.eval_iou", spec.eval_iou);
    spec.recall_k = static_cast<int>(kv.get_int("experiment.recall_k", spec.recall_k));
    spec.froc_grid = kv.get_real_list("experiment.froc_grid", spec.froc_grid);
    spec.iou_grid = kv.get_real_list("experiment.iou_grid", spec.iou_grid);
    spec.fp_allowance = kv.get_real("experiment.fp_allowance", spec.fp_allowance);
    spec.fixed_prior_sweep =
        kv.get_real_list("experiment.fixed_prior_sweep", spec.fixed_prior_sweep);
    spec.jobs = static_cast<int>(kv.get_int("experiment.jobs", spec.jobs));
    check_experiment_spec(spec);
    return spec;
}

}  // namespace pudet
