#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msfuse/geometry.hpp"

namespace msfuse {

/// Reference box tiled at a feature cell. ratio is height / width, so a
/// ratio of 2 is a tall box; side length `scale` is the ratio-1 box.
struct Anchor {
  float scale = 0.0f;
  float ratio = 1.0f;
  float center_x = 0.0f;
  float center_y = 0.0f;
  float stride = 0.0f;

  float width() const;
  float height() const;
  BBox box() const;
};

/// |scales| * |ratios| anchors per cell, cell-major (row, column), then scale,
/// then ratio. Cell (i, j) is centred at ((j + 0.5) * stride, (i + 0.5) * stride).
/// A ratio of 0.5 is rejected: it yields wide boxes, and pedestrians are tall.
std::vector<Anchor> generate_anchors(std::size_t feat_h, std::size_t feat_w, float stride,
                                     std::span<const float> scales,
                                     std::span<const float> ratios);

std::vector<BBox> anchor_boxes(std::span<const Anchor> anchors);

}  // namespace msfuse
