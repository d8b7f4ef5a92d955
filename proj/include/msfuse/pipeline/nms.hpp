#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "msfuse/geometry.hpp"
#include "msfuse/pipeline/detection.hpp"

namespace msfuse {

/// Greedy suppression over parallel box/score arrays. Visits boxes by
/// descending score (equal scores in input order) and keeps a box iff its IoU
/// with every kept box is <= iou_thresh. Returns kept indices in visit order.
inline std::vector<std::size_t> nms_indices(std::span<const BBox> boxes,
                                            std::span<const float> scores, double iou_thresh) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(boxes[i], boxes[k]) > iou_thresh) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

/// Non-maximum suppression of detections; output sorted by descending score.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh);

}  // namespace msfuse
