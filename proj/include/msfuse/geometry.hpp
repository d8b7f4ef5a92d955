#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "msfuse/errors.hpp"

namespace msfuse {

/// Axis-aligned pixel rectangle with continuous corners; x2/y2 are the far
/// edges, so width is x2 - x1.
struct BBox {
  float x1 = 0.0f;
  float y1 = 0.0f;
  float x2 = 0.0f;
  float y2 = 0.0f;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  double area() const { return static_cast<double>(width()) * static_cast<double>(height()); }
  float center_x() const { return 0.5f * (x1 + x2); }
  float center_y() const { return 0.5f * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 > x1 && y2 > y1;
  }

  std::string str() const {
    return "(" + std::to_string(x1) + "," + std::to_string(y1) + "," + std::to_string(x2) + "," +
           std::to_string(y2) + ")";
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline void require_valid(const BBox& b, const char* what) {
  if (!b.valid()) {
    throw ContractViolation(std::string(what) + ": invalid box " + b.str() +
                            " (need x2 > x1 and y2 > y1)");
  }
}

/// Intersection over union in [0, 1].
inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1);
  const double ih = std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Clip to [0, width] x [0, height]. May produce a degenerate box.
inline BBox clip_to(const BBox& b, float width, float height) {
  return {std::clamp(b.x1, 0.0f, width), std::clamp(b.y1, 0.0f, height),
          std::clamp(b.x2, 0.0f, width), std::clamp(b.y2, 0.0f, height)};
}

}  // namespace msfuse
