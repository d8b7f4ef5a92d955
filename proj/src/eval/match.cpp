#include "msfuse/eval/match.hpp"

#include <string>

#include "msfuse/errors.hpp"

namespace msfuse {

MatchResult match_boxes(std::span<const BBox> boxes, std::span<const BBox> kept,
                        std::span<const BBox> ignored, double iou_thresh) {
  MatchResult r;
  r.iou_thresh = iou_thresh;
  std::vector<bool> taken(kept.size(), false);
  for (std::size_t d = 0; d < boxes.size(); ++d) {
    double best = iou_thresh;
    std::size_t best_gt = kept.size();
    for (std::size_t g = 0; g < kept.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(boxes[d], kept[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < kept.size()) {
      taken[best_gt] = true;
      r.tp.emplace_back(d, best_gt);
      continue;
    }
    bool absorbed = false;
    for (const BBox& ig : ignored) absorbed = absorbed || iou(boxes[d], ig) > iou_thresh;
    (absorbed ? r.ignored : r.fp).push_back(d);
  }
  for (std::size_t g = 0; g < kept.size(); ++g) {
    if (!taken[g]) r.missed.push_back(g);
  }
  return r;
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const BBox> kept,
                             std::span<const BBox> ignored, double iou_thresh) {
  std::vector<BBox> boxes;
  boxes.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (i > 0 && dets[i].score > dets[i - 1].score) {
      throw ContractViolation("match_detections: detections must be sorted by descending score "
                              "(index " + std::to_string(i) + " has " +
                              std::to_string(dets[i].score) + " after " +
                              std::to_string(dets[i - 1].score) + ")");
    }
    boxes.push_back(dets[i].bbox);
  }
  return match_boxes(boxes, kept, ignored, iou_thresh);
}

}  // namespace msfuse
