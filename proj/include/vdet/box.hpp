#pragma once

#include <algorithm>
#include <cstdint>

namespace vdet {

/// Axis-aligned 2D lesion box on one slice, pixel coordinates.
struct LesionBox {
  std::int64_t slice = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 1.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double longer_side() const { return std::max(width(), height()); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const LesionBox& a, const LesionBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace vdet
