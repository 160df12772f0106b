#pragma once

#include <algorithm>

namespace instseg {

/// Axis-aligned rectangle in continuous pixel coordinates. Pixel (y, x)
/// occupies [y, y+1) x [x, x+1), so integer-aligned boxes have exact areas.
/// A valid box has strictly positive extent on both axes.
struct Box {
  double y_min = 0.0;
  double x_min = 0.0;
  double y_max = 0.0;
  double x_max = 0.0;

  double height() const { return y_max - y_min; }
  double width() const { return x_max - x_min; }
  double area() const { return height() * width(); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  bool valid() const { return y_max > y_min && x_max > x_min; }

  bool operator==(const Box& o) const {
    return y_min == o.y_min && x_min == o.x_min && y_max == o.y_max && x_max == o.x_max;
  }
};

/// Intersection over union of two valid boxes; 0 when interiors are disjoint.
inline double box_iou(const Box& a, const Box& b) {
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  if (iy <= 0.0 || ix <= 0.0) return 0.0;
  const double inter = iy * ix;
  return inter / (a.area() + b.area() - inter);
}

/// Clips a box to [0,h] x [0,w]. The result may be degenerate; callers that
/// require validity must check.
inline Box clip_box(const Box& b, double h, double w) {
  Box r;
  r.y_min = std::clamp(b.y_min, 0.0, h);
  r.y_max = std::clamp(b.y_max, 0.0, h);
  r.x_min = std::clamp(b.x_min, 0.0, w);
  r.x_max = std::clamp(b.x_max, 0.0, w);
  return r;
}

}  // namespace instseg
