#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "pudet/config.hpp"
#include "pudet/errors.hpp"
#include "pudet/geometry.hpp"
#include "pudet/scene.hpp"

namespace pudet {

struct Detection {
    std::int64_t scene_id = 0;
    Box box;
    double score = 0.0;
};

// Descending score; ties broken by (scene id, box lexicographic) so equal
// scores rank deterministically.
inline bool detection_rank_less(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
    return box_less(a.box, b.box);
}

namespace detail {

struct TruthIndex {
    // scene id -> ground-truth boxes (ALL objects, labeled or not)
    std::map<std::int64_t, std::vector<Box>> boxes;
    std::size_t total = 0;
    std::size_t scene_count = 0;
};

inline TruthIndex index_truth(const std::vector<Scene>& scenes) {
    TruthIndex idx;
    idx.scene_count = scenes.size();
    for (const Scene& s : scenes) {
        auto [it, fresh] = idx.boxes.emplace(s.id, std::vector<Box>{});
        if (!fresh) throw InvalidInputError("duplicate scene id in ground truth");
        for (const ObjectInstance& o : s.objects) it->second.push_back(o.box);
        idx.total += s.objects.size();
    }
    return idx;
}

// Greedy one-to-one matching in rank order: each detection takes the
// highest-IoU unmatched ground truth of its scene at or above the threshold,
// residual ties going to the lowest ground-truth index. Returns a TP flag per
// detection. The flags of a prefix equal the flags of matching that prefix
// alone, which the threshold-sweep metrics rely on.
inline std::vector<char> greedy_match_flags(const std::vector<Detection>& ranked,
                                            const TruthIndex& truth, double iou_threshold) {
    std::map<std::int64_t, std::vector<char>> used;
    for (const auto& [id, boxes] : truth.boxes) used[id].assign(boxes.size(), 0);
    std::vector<char> tp(ranked.size(), 0);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto it = truth.boxes.find(ranked[i].scene_id);
        if (it == truth.boxes.end())
            throw InvalidInputError("detection references unknown scene id " +
                                    std::to_string(ranked[i].scene_id));
        const std::vector<Box>& boxes = it->second;
        std::vector<char>& taken = used[ranked[i].scene_id];
        double best_iou = 0.0;
        std::size_t best_j = boxes.size();
        for (std::size_t j = 0; j < boxes.size(); ++j) {
            if (taken[j]) continue;
            const double v = iou(ranked[i].box, boxes[j]);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best_j = j;
            }
        }
        if (best_j < boxes.size()) {
            taken[best_j] = 1;
            tp[i] = 1;
        }
    }
    return tp;
}

// Largest sensitivity over rank prefixes whose false-positive rate per image
// stays within the allowance. Prefixes may only end at score-group
// boundaries: a score threshold cannot split equal scores.
inline double max_sensitivity_within(const std::vector<Detection>& ranked,
                                     const std::vector<char>& tp, std::size_t total_truth,
                                     std::size_t scene_count, double fp_allowance) {
    double best = 0.0;
    std::size_t tp_count = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        tp_count += tp[i] ? 1 : 0;
        const bool group_end = i + 1 == ranked.size() || ranked[i + 1].score != ranked[i].score;
        if (!group_end) continue;
        const std::size_t fp_count = (i + 1) - tp_count;
        const double fp_rate =
            static_cast<double>(fp_count) / static_cast<double>(scene_count);
        if (fp_rate <= fp_allowance)
            best = std::max(best, static_cast<double>(tp_count) / static_cast<double>(total_truth));
    }
    return best;
}

}  // namespace detail

// Area under the precision envelope over recall (all-point interpolation),
// scored against the complete ground truth at one IoU threshold.
inline double average_precision(std::vector<Detection> detections,
                                const std::vector<Scene>& truth, double iou_threshold) {
    const detail::TruthIndex idx = detail::index_truth(truth);
    if (idx.total == 0)
        throw UndefinedMetricError("average precision is undefined with zero ground truth");
    std::sort(detections.begin(), detections.end(), detection_rank_less);
    const std::vector<char> tp = detail::greedy_match_flags(detections, idx, iou_threshold);
    const std::size_t n = detections.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp_count += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp_count) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp_count) / static_cast<double>(idx.total);
    }
    // precision envelope: max precision at any recall >= r
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

// Fraction of all ground-truth objects matched by the k highest-scoring
// proposals of each scene (the per-image top-k protocol; ranking ties break
// like average_precision).
inline double recall_at_k(const std::vector<Detection>& proposals,
                          const std::vector<Scene>& truth, int k, double iou_threshold = 0.5) {
    if (k < 1) throw InvalidInputError("recall_at_k requires k >= 1");
    const detail::TruthIndex idx = detail::index_truth(truth);
    if (idx.total == 0)
        throw UndefinedMetricError("recall is undefined with zero ground truth");
    std::map<std::int64_t, std::vector<Detection>> by_scene;
    for (const Detection& p : proposals) by_scene[p.scene_id].push_back(p);
    std::size_t matched = 0;
    for (auto& [scene_id, list] : by_scene) {
        std::sort(list.begin(), list.end(), detection_rank_less);
        if (list.size() > static_cast<std::size_t>(k)) list.resize(static_cast<std::size_t>(k));
        detail::TruthIndex one;
        const auto it = idx.boxes.find(scene_id);
        if (it == idx.boxes.end())
            throw InvalidInputError("proposal references unknown scene id " +
                                    std::to_string(scene_id));
        one.boxes.emplace(scene_id, it->second);
        one.total = it->second.size();
        one.scene_count = 1;
        for (char f : detail::greedy_match_flags(list, one, iou_threshold)) matched += f ? 1 : 0;
    }
    return static_cast<double>(matched) / static_cast<double>(idx.total);
}

// Free-response ROC: for each allowed false-positive-per-image rate, the best
// sensitivity over score thresholds whose FP rate stays within it.
inline std::vector<double> froc_curve(std::vector<Detection> detections,
                                      const std::vector<Scene>& truth,
                                      const std::vector<double>& fp_per_image_grid,
                                      double iou_threshold = 0.5) {
    if (fp_per_image_grid.empty()) throw InvalidInputError("FP allowance grid is empty");
    for (std::size_t i = 0; i < fp_per_image_grid.size(); ++i) {
        if (!(fp_per_image_grid[i] > 0.0))
            throw InvalidInputError("FP allowances must be positive");
        if (i > 0 && fp_per_image_grid[i] <= fp_per_image_grid[i - 1])
            throw InvalidInputError("FP allowance grid must be strictly ascending");
    }
    const detail::TruthIndex idx = detail::index_truth(truth);
    if (idx.total == 0)
        throw UndefinedMetricError("FROC is undefined with zero ground truth");
    std::sort(detections.begin(), detections.end(), detection_rank_less);
    const std::vector<char> tp = detail::greedy_match_flags(detections, idx, iou_threshold);
    std::vector<double> sensitivities;
    sensitivities.reserve(fp_per_image_grid.size());
    for (double allowance : fp_per_image_grid)
        sensitivities.push_back(detail::max_sensitivity_within(detections, tp, idx.total,
                                                               idx.scene_count, allowance));
    return sensitivities;
}

// Sensitivity at a fixed FP-per-image allowance, recomputed per IoU
// threshold. Non-increasing in the threshold: stricter overlap can only
// demote matches.
inline std::vector<double> sensitivity_vs_iou(std::vector<Detection> detections,
                                              const std::vector<Scene>& truth,
                                              const std::vector<double>& iou_grid,
                                              double fp_allowance) {
    if (iou_grid.empty()) throw InvalidInputError("IoU grid is empty");
    for (std::size_t i = 0; i < iou_grid.size(); ++i) {
        if (!(iou_grid[i] > 0.0 && iou_grid[i] <= 1.0))
            throw InvalidInputError("IoU thresholds must lie in (0, 1]");
        if (i > 0 && iou_grid[i] <= iou_grid[i - 1])
            throw InvalidInputError("IoU grid must be strictly ascending");
    }
    if (!(fp_allowance > 0.0)) throw InvalidInputError("FP allowance must be positive");
    const detail::TruthIndex idx = detail::index_truth(truth);
    if (idx.total == 0)
        throw UndefinedMetricError("sensitivity is undefined with zero ground truth");
    std::sort(detections.begin(), detections.end(), detection_rank_less);
    std::vector<double> out;
    out.reserve(iou_grid.size());
    for (double thr : iou_grid) {
        const std::vector<char> tp = detail::greedy_match_flags(detections, idx, thr);
        out.push_back(detail::max_sensitivity_within(detections, tp, idx.total, idx.scene_count,
                                                     fp_allowance));
    }
    return out;
}

// --- tabular export --------------------------------------------------------

struct EvalRow {
    std::string metric;
    double threshold = 0.0;
    double value = 0.0;
};

inline void write_eval_rows(std::ostream& os, const std::vector<EvalRow>& rows) {
    os << "metric,threshold,value\n";
    for (const EvalRow& r : rows)
        os << r.metric << "," << format_real(r.threshold) << "," << format_real(r.value) << "\n";
}

}  // namespace pudet
