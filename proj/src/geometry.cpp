#include "rdns/geometry.hpp"

#include <algorithm>
#include <sstream>

namespace rdns {

std::string Box::str() const {
  std::ostringstream os;
  os << "[" << x1 << "," << y1 << "," << x2 << "," << y2 << "]";
  return os.str();
}

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace rdns
