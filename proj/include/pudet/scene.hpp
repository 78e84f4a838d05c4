#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pudet/config.hpp"
#include "pudet/errors.hpp"
#include "pudet/geometry.hpp"
#include "pudet/rng.hpp"

namespace pudet {

// Ground-truth object. `labeled` is whether its annotation survived the
// discard protocol; the geometry always stays in the scene so evaluation can
// score against the complete truth.
struct ObjectInstance {
    Box box;
    bool labeled = true;
};

struct Scene {
    std::int64_t id = 0;
    double width = 0.0;
    double height = 0.0;
    std::vector<ObjectInstance> objects;
};

enum class MissingnessMode { PerAnnotation, PerImage };

struct MissingnessSpec {
    double rho = 0.0;
    MissingnessMode mode = MissingnessMode::PerAnnotation;
};

inline const char* missingness_mode_name(MissingnessMode m) {
    return m == MissingnessMode::PerAnnotation ? "per-annotation" : "per-image";
}

inline MissingnessMode missingness_mode_from(const std::string& s) {
    if (s == "per-annotation") return MissingnessMode::PerAnnotation;
    if (s == "per-image") return MissingnessMode::PerImage;
    throw ConfigError("unknown missingness mode: " + s);
}

struct AnchorGrid {
    int rows = 8;
    int cols = 8;
    std::vector<double> scales = {36.0, 18.0};  // anchor side lengths
};

// Generative world: object geometry plus the feature model. Proposal features
// are drawn from Gaussian(mu_n + (mu_p - mu_n) * max_iou_true, noise^2 I), so
// they reflect what a proposal truly covers; a discarded label changes a
// proposal's role but never its features. The default means are antipodal,
// putting the feature midpoint (IoU 0.5, the positive-role boundary) at the
// origin: background suppression then rotates any classifier toward the true
// objectness direction instead of collapsing it. Default sizes sit just above
// the matching anchor scale so every placement overlaps its nearest anchor at
// IoU >= 0.5: whether an object is found depends on learned scores, never on
// a geometry gap. The second scale only contributes background anchors.
struct WorldConfig {
    int feature_dim = 8;
    std::vector<double> mu_positive;  // defaults to all +1
    std::vector<double> mu_negative;  // defaults to all -1
    double feature_noise = 0.5;
    int min_objects = 1;
    int max_objects = 6;
    double min_object_size = 36.0;
    double max_object_size = 38.0;
    double width = 100.0;
    double height = 100.0;
    AnchorGrid grid;
    double positive_iou_threshold = 0.5;
    std::uint64_t seed = 1;

    std::vector<double> mu_p() const {
        return mu_positive.empty() ? std::vector<double>(feature_dim, 1.0) : mu_positive;
    }
    std::vector<double> mu_n() const {
        return mu_negative.empty() ? std::vector<double>(feature_dim, -1.0) : mu_negative;
    }
};

inline void check_world_config(const WorldConfig& c) {
    if (c.feature_dim <= 0) throw ConfigError("feature_dim must be positive");
    if (!c.mu_positive.empty() && static_cast<int>(c.mu_positive.size()) != c.feature_dim)
        throw ConfigError("mu_positive length must equal feature_dim");
    if (!c.mu_negative.empty() && static_cast<int>(c.mu_negative.size()) != c.feature_dim)
        throw ConfigError("mu_negative length must equal feature_dim");
    if (c.mu_p() == c.mu_n()) throw ConfigError("positive and negative feature means coincide");
    if (!(c.feature_noise > 0.0)) throw ConfigError("feature_noise must be positive");
    if (c.min_objects < 0 || c.max_objects < c.min_objects)
        throw ConfigError("objects-per-scene range is invalid");
    if (!(c.min_object_size > 0.0) || c.max_object_size < c.min_object_size)
        throw ConfigError("object size range is invalid");
    if (!(c.width > 0.0) || !(c.height > 0.0)) throw ConfigError("scene extent must be positive");
    if (c.max_object_size > c.width || c.max_object_size > c.height)
        throw ConfigError("objects can exceed the scene extent; shrink the size range");
    if (c.grid.rows <= 0 || c.grid.cols <= 0 || c.grid.scales.empty())
        throw ConfigError("anchor grid must have positive rows, cols and at least one scale");
    for (double s : c.grid.scales)
        if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
    if (!(c.positive_iou_threshold > 0.0 && c.positive_iou_threshold < 1.0))
        throw ConfigError("positive IoU threshold must lie in (0, 1)");
}

// Named substreams derived from a world seed. Label discard and subset
// selection draw from their own streams so the same label state is
// reproducible regardless of who applies it.
inline constexpr std::uint64_t kDiscardStreamSalt = 0xD15CULL;
inline constexpr std::uint64_t kSubsetStreamSalt = 0x5B5EULL;

// Substream seeds: geometry and features of a scene come from separate
// streams so the same scene content is reproducible from (config.seed, id)
// no matter how many other scenes were generated.
inline std::uint64_t scene_geometry_seed(std::uint64_t seed, std::int64_t id) {
    return mix_seed(seed, 2 * static_cast<std::uint64_t>(id));
}
inline std::uint64_t scene_feature_seed(std::uint64_t seed, std::int64_t id) {
    return mix_seed(seed, 2 * static_cast<std::uint64_t>(id) + 1);
}

inline Scene generate_scene(const WorldConfig& config, std::int64_t id) {
    check_world_config(config);
    Rng rng(scene_geometry_seed(config.seed, id));
    Scene scene;
    scene.id = id;
    scene.width = config.width;
    scene.height = config.height;
    const int count = rng.uniform_int(config.min_objects, config.max_objects);
    scene.objects.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double w = rng.uniform(config.min_object_size, config.max_object_size);
        const double h = rng.uniform(config.min_object_size, config.max_object_size);
        const double x = rng.uniform(0.0, config.width - w);
        const double y = rng.uniform(0.0, config.height - h);
        scene.objects.push_back({{x, y, x + w, y + h}, true});
    }
    return scene;
}

inline std::vector<Scene> generate_scenes(const WorldConfig& config, int count,
                                          std::int64_t first_id = 0) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) scenes.push_back(generate_scene(config, first_id + i));
    return scenes;
}

// Per-annotation discard: each object's label is dropped independently with
// probability rho. Geometry is untouched; unlabeled objects stay in the scene
// as evaluation ground truth.
inline void discard_labels(std::vector<Scene>& scenes, const MissingnessSpec& spec, Rng& rng) {
    if (spec.mode != MissingnessMode::PerAnnotation)
        throw InvalidInputError("discard_labels requires per-annotation mode");
    if (!(spec.rho >= 0.0 && spec.rho <= 1.0))
        throw InvalidInputError("rho must lie in [0, 1]");
    for (Scene& scene : scenes)
        for (ObjectInstance& obj : scene.objects)
            if (rng.bernoulli(spec.rho)) obj.labeled = false;
}

// Whole-image discard: keep ceil((1-rho)*n) uniformly sampled scenes, each
// with its labels intact. Selection preserves the original scene order.
inline std::vector<Scene> make_full_pn_subset(const std::vector<Scene>& scenes, double rho,
                                              Rng& rng) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidInputError("rho must lie in [0, 1]");
    const std::size_t n = scenes.size();
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil((1.0 - rho) * static_cast<double>(n) - 1e-9));
    if (keep == 0) throw ConfigError("full-pn subset would be empty");
    std::vector<std::size_t> index(n);
    std::iota(index.begin(), index.end(), 0);
    rng.partial_shuffle(index, keep);
    index.resize(keep);
    std::sort(index.begin(), index.end());
    std::vector<Scene> out;
    out.reserve(keep);
    for (std::size_t i : index) out.push_back(scenes[i]);
    return out;
}

enum class ProposalRole { LabeledPositive, Other };

struct Proposal {
    Box box;
    std::vector<double> features;
    double max_iou_true = 0.0;     // vs all objects
    double max_iou_labeled = 0.0;  // vs labeled objects only
    ProposalRole role = ProposalRole::Other;
};

// Deterministic anchor tiling: rows x cols centers, one box per scale,
// clipped to the scene extent. Degenerate clipped boxes are dropped.
inline std::vector<Proposal> propose_anchors(const Scene& scene, const WorldConfig& config) {
    check_world_config(config);
    std::vector<Proposal> proposals;
    proposals.reserve(static_cast<std::size_t>(config.grid.rows) * config.grid.cols *
                      config.grid.scales.size());
    for (int r = 0; r < config.grid.rows; ++r) {
        for (int c = 0; c < config.grid.cols; ++c) {
            const double cx = (c + 0.5) * scene.width / config.grid.cols;
            const double cy = (r + 0.5) * scene.height / config.grid.rows;
            for (double s : config.grid.scales) {
                Box box{cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0};
                box.x_min = std::max(box.x_min, 0.0);
                box.y_min = std::max(box.y_min, 0.0);
                box.x_max = std::min(box.x_max, scene.width);
                box.y_max = std::min(box.y_max, scene.height);
                if (!box.valid()) continue;
                Proposal p;
                p.box = box;
                proposals.push_back(std::move(p));
            }
        }
    }
    return proposals;
}

// Recompute the label-dependent fields only: max_iou_labeled and role. Used
// when the same scene geometry is viewed under a different label state.
inline void assign_roles(std::vector<Proposal>& proposals, const Scene& scene,
                         const WorldConfig& config) {
    for (Proposal& p : proposals) {
        double best_labeled = 0.0;
        for (const ObjectInstance& obj : scene.objects) {
            if (!obj.labeled) continue;
            best_labeled = std::max(best_labeled, iou(p.box, obj.box));
        }
        p.max_iou_labeled = best_labeled;
        p.role = best_labeled >= config.positive_iou_threshold ? ProposalRole::LabeledPositive
                                                               : ProposalRole::Other;
    }
}

// Fill in IoU statistics, features and roles. Features depend only on the
// true content (max IoU against all objects), so a proposal over an unlabeled
// object looks positive in feature space while its role stays Other.
inline void featurize_and_assign(std::vector<Proposal>& proposals, const Scene& scene,
                                 const WorldConfig& config, Rng& rng) {
    check_world_config(config);
    const std::vector<double> mu_p = config.mu_p();
    const std::vector<double> mu_n = config.mu_n();
    for (Proposal& p : proposals) {
        double best_true = 0.0;
        for (const ObjectInstance& obj : scene.objects)
            best_true = std::max(best_true, iou(p.box, obj.box));
        p.max_iou_true = best_true;
        p.features.resize(static_cast<std::size_t>(config.feature_dim));
        for (int i = 0; i < config.feature_dim; ++i) {
            const double mean = mu_n[i] + (mu_p[i] - mu_n[i]) * best_true;
            p.features[i] = rng.normal(mean, config.feature_noise);
        }
    }
    assign_roles(proposals, scene, config);
}

// Anchors + features + roles for one scene from its derived feature stream.
inline std::vector<Proposal> scene_proposals(const Scene& scene, const WorldConfig& config) {
    std::vector<Proposal> proposals = propose_anchors(scene, config);
    Rng rng(scene_feature_seed(config.seed, scene.id));
    featurize_and_assign(proposals, scene, config, rng);
    return proposals;
}

// --- config (de)serialization ---------------------------------------------

inline void world_to_keyvalues(const WorldConfig& c, KeyValues& kv) {
    kv.set_int("world.feature_dim", c.feature_dim);
    kv.set_real_list("world.mu_positive", c.mu_p());
    kv.set_real_list("world.mu_negative", c.mu_n());
    kv.set_real("world.feature_noise", c.feature_noise);
    kv.set_int("world.min_objects", c.min_objects);
    kv.set_int("world.max_objects", c.max_objects);
    kv.set_real("world.min_object_size", c.min_object_size);
    kv.set_real("world.max_object_size", c.max_object_size);
    kv.set_real("world.width", c.width);
    kv.set_real("world.height", c.height);
    kv.set_int("world.grid_rows", c.grid.rows);
    kv.set_int("world.grid_cols", c.grid.cols);
    kv.set_real_list("world.grid_scales", c.grid.scales);
    kv.set_real("world.positive_iou_threshold", c.positive_iou_threshold);
    kv.set_u64("world.seed", c.seed);
}

inline WorldConfig world_from_keyvalues(const KeyValues& kv) {
    WorldConfig c;
    c.feature_dim = static_cast<int>(kv.get_int("world.feature_dim", c.feature_dim));
    c.mu_positive = kv.get_real_list("world.mu_positive", {});
    c.mu_negative = kv.get_real_list("world.mu_negative", {});
    c.feature_noise = kv.get_real("world.feature_noise", c.feature_noise);
    c.min_objects = static_cast<int>(kv.get_int("world.min_objects", c.min_objects));
    c.max_objects = static_cast<int>(kv.get_int("world.max_objects", c.max_objects));
    c.min_object_size = kv.get_real("world.min_object_size", c.min_object_size);
    c.max_object_size = kv.get_real("world.max_object_size", c.max_object_size);
    c.width = kv.get_real("world.width", c.width);
    c.height = kv.get_real("world.height", c.height);
    c.grid.rows = static_cast<int>(kv.get_int("world.grid_rows", c.grid.rows));
    c.grid.cols = static_cast<int>(kv.get_int("world.grid_cols", c.grid.cols));
    c.grid.scales = kv.get_real_list("world.grid_scales", c.grid.scales);
    c.positive_iou_threshold =
        kv.get_real("world.positive_iou_threshold", c.positive_iou_threshold);
    c.seed = kv.get_u64("world.seed", c.seed);
    check_world_config(c);
    return c;
}

}  // namespace pudet
