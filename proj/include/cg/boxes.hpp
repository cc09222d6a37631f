#pragma once

#include <algorithm>

#include "cg/common.hpp"

namespace cg {

// Continuous half-open rectangle; area is (x2-x1)*(y2-y1).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double w() const { return x2 - x1; }
    double h() const { return y2 - y1; }
    double area() const { return w() * h(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    bool well_ordered() const { return x2 >= x1 && y2 >= y1; }
};

inline double intersection_area(const Box& a, const Box& b) {
    double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

inline double union_area(const Box& a, const Box& b) {
    return a.area() + b.area() - intersection_area(a, b);
}

inline double iou(const Box& a, const Box& b) {
    CG_CHECK(a.well_ordered() && b.well_ordered(), "iou: corners out of order");
    double u = union_area(a, b);
    return u > 0.0 ? intersection_area(a, b) / u : 0.0;
}

}  // namespace cg
