// SPDX-License-Identifier: Apache-2.0

#include "lmdetr/boxes.hpp"

#include <algorithm>

#include "lmdetr/errors.hpp"

namespace lmdetr {

Corners to_corners(const Box& b) {
    return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

Box from_corners(const Corners& c) {
    return {0.5 * (c.x0 + c.x1), 0.5 * (c.y0 + c.y1), c.x1 - c.x0, c.y1 - c.y0};
}

double area(const Corners& c) { return std::max(0.0, c.x1 - c.x0) * std::max(0.0, c.y1 - c.y0); }

namespace {

double intersection(const Corners& a, const Corners& b) {
    const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return std::max(0.0, w) * std::max(0.0, h);
}

}  // namespace

double iou(const Box& a, const Box& b) {
    const auto ca = to_corners(a), cb = to_corners(b);
    const double inter = intersection(ca, cb);
    const double uni = area(ca) + area(cb) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou_loss(const Corners& pred, const Corners& gt) {
    if (!(area(gt) > 0.0)) throw InputError("giou_loss: ground-truth box has zero area");
    const double inter = intersection(pred, gt);
    const double uni = area(pred) + area(gt) - inter;
    const Corners hull{std::min(pred.x0, gt.x0), std::min(pred.y0, gt.y0), std::max(pred.x1, gt.x1),
                       std::max(pred.y1, gt.y1)};
    const double hull_area = area(hull);
    return 1.0 - inter / uni + (hull_area - uni) / hull_area;
}

double giou_loss(const Box& pred, const Box& gt) { return giou_loss(to_corners(pred), to_corners(gt)); }

}  // namespace lmdetr
