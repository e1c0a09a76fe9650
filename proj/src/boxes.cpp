#include "pdet/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace pdet {

Corners to_corners(const Box& b) {
    return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

double box_area(const Box& b) { return b.w * b.h; }

double l1_distance(const Box& a, const Box& b) {
    return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
           std::abs(a.h - b.h);
}

static double intersection(const Corners& a, const Corners& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

double iou(const Box& a, const Box& b) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const double inter = intersection(ca, cb);
    const double uni = box_area(a) + box_area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    const Corners ca = to_corners(a), cb = to_corners(b);
    const double inter = intersection(ca, cb);
    const double uni = box_area(a) + box_area(b) - inter;
    const double ex = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
    const double ey = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
    const double enclose = ex * ey;
    return inter / uni - (enclose - uni) / enclose;
}

GiouGrad giou_with_grad(const Box& gt, const Box& pred) {
    const Corners g = to_corners(gt), p = to_corners(pred);

    const double iw = std::min(g.x2, p.x2) - std::max(g.x1, p.x1);
    const double ih = std::min(g.y2, p.y2) - std::max(g.y1, p.y1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double inter = overlap ? iw * ih : 0.0;

    const double area_g = (g.x2 - g.x1) * (g.y2 - g.y1);
    const double area_p = (p.x2 - p.x1) * (p.y2 - p.y1);
    const double uni = area_g + area_p - inter;

    const double ew = std::max(g.x2, p.x2) - std::min(g.x1, p.x1);
    const double eh = std::max(g.y2, p.y2) - std::min(g.y1, p.y1);
    const double enclose = ew * eh;

    const double value = inter / uni - (enclose - uni) / enclose;

    // Derivatives w.r.t. predicted corners (x1, y1, x2, y2).
    double dI[4] = {0, 0, 0, 0};
    if (overlap) {
        if (p.x1 > g.x1) dI[0] = -ih;
        if (p.y1 > g.y1) dI[1] = -iw;
        if (p.x2 < g.x2) dI[2] = ih;
        if (p.y2 < g.y2) dI[3] = iw;
    }
    const double pw = p.x2 - p.x1, ph = p.y2 - p.y1;
    const double dAp[4] = {-ph, -pw, ph, pw};
    double dU[4], dE[4];
    for (int k = 0; k < 4; ++k) dU[k] = dAp[k] - dI[k];
    dE[0] = (p.x1 < g.x1) ? -eh : 0.0;
    dE[1] = (p.y1 < g.y1) ? -ew : 0.0;
    dE[2] = (p.x2 > g.x2) ? eh : 0.0;
    dE[3] = (p.y2 > g.y2) ? ew : 0.0;

    double d_corner[4];
    for (int k = 0; k < 4; ++k) {
        const double d_iou = (dI[k] * uni - inter * dU[k]) / (uni * uni);
        d_corner[k] = d_iou + dU[k] / enclose - uni * dE[k] / (enclose * enclose);
    }

    // Corners -> center-size: x1 = cx - w/2, x2 = cx + w/2 (same for y).
    GiouGrad out;
    out.value = value;
    out.d_pred[0] = d_corner[0] + d_corner[2];
    out.d_pred[1] = d_corner[1] + d_corner[3];
    out.d_pred[2] = 0.5 * (d_corner[2] - d_corner[0]);
    out.d_pred[3] = 0.5 * (d_corner[3] - d_corner[1]);
    return out;
}

}  // namespace pdet
