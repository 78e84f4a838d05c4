#pragma once

#include <algorithm>
#include <string>

#include "pudet/errors.hpp"

namespace pudet {

// Axis-aligned box in scene units.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    bool valid() const { return x_min < x_max && y_min < y_max; }

    friend bool operator==(const Box&, const Box&) = default;
};

// Lexicographic (x_min, y_min, x_max, y_max); the deterministic tie-break used
// when ranking equal-score detections.
inline bool box_less(const Box& a, const Box& b) {
    if (a.x_min != b.x_min) return a.x_min < b.x_min;
    if (a.y_min != b.y_min) return a.y_min < b.y_min;
    if (a.x_max != b.x_max) return a.x_max < b.x_max;
    return a.y_max < b.y_max;
}

inline void check_box(const Box& b) {
    if (!b.valid())
        throw InvalidInputError("degenerate box [" + std::to_string(b.x_min) + "," +
                                std::to_string(b.y_min) + "," + std::to_string(b.x_max) + "," +
                                std::to_string(b.y_max) + "]");
}

// Intersection over union; symmetric, 0 for disjoint boxes, 1 for identical.
inline double iou(const Box& a, const Box& b) {
    check_box(a);
    check_box(b);
    const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

}  // namespace pudet
