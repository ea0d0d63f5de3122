// SPDX-License-Identifier: Apache-2.0
//
// Axis-aligned boxes in normalized (cx, cy, w, h) form.

#pragma once

#include <array>

namespace lmdetr {

struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
    bool operator==(const Box&) const = default;
};

struct Corners {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

Corners to_corners(const Box& b);
Box from_corners(const Corners& c);

double area(const Corners& c);
double iou(const Box& a, const Box& b);

// 1 - IoU + |C \ (A u B)| / |C| with C the smallest enclosing box.
// Throws InputError when `gt` has zero area.
double giou_loss(const Box& pred, const Box& gt);
double giou_loss(const Corners& pred, const Corners& gt);

}  // namespace lmdetr
