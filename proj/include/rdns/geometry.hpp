#pragma once

#include <string>

namespace rdns {

/// Axis-aligned box in image pixel-edge coordinates; pixel (row r, col c) covers
/// [c, c + 1) x [r, r + 1).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
  double cx() const { return x1 + 0.5 * width(); }
  double cy() const { return y1 + 0.5 * height(); }

  std::string str() const;
  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union of two boxes; 0 when both are empty.
double box_iou(const Box& a, const Box& b);

}  // namespace rdns
