#pragma once

#include <array>

namespace pdet {

// Axis-aligned box in normalized image coordinates, center-size form.
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    bool operator==(const Box&) const = default;
};

struct Corners {
    double x1, y1, x2, y2;
};

Corners to_corners(const Box& b);

double box_area(const Box& b);
double l1_distance(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

// Generalized IoU in (-1, 1]; equals IoU minus the normalized empty area of
// the tightest enclosing box.
double giou(const Box& a, const Box& b);

// giou(gt, pred) plus d(giou)/d(pred) in center-size coordinates.
// Piecewise smooth; the branch actually taken defines the derivative.
struct GiouGrad {
    double value;
    std::array<double, 4> d_pred;  // d/dcx, d/dcy, d/dw, d/dh
};
GiouGrad giou_with_grad(const Box& gt, const Box& pred);

}  // namespace pdet
