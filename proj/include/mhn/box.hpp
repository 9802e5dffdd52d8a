#pragma once

#include <algorithm>
#include <cmath>

namespace mhn {

// Axis-aligned box in continuous pixel coordinates, (x1, y1) inclusive
// corner and (x2, y2) exclusive corner. Width is x2 - x1 (no +1).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return x1 + 0.5 * width(); }
  double center_y() const { return y1 + 0.5 * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool finite() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2);
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace mhn
