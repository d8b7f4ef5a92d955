#include "msfuse/pipeline/nms.hpp"

namespace msfuse {

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh) {
  std::vector<BBox> boxes;
  std::vector<float> scores;
  boxes.reserve(dets.size());
  scores.reserve(dets.size());
  for (const Detection& d : dets) {
    boxes.push_back(d.bbox);
    scores.push_back(d.score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(boxes, scores, iou_thresh)) out.push_back(dets[i]);
  return out;
}

}  // namespace msfuse
